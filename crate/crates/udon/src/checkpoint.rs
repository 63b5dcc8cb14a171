//! Checkpoint file format: magic, version, the resolved config echo, then
//! every parameter tensor as (name length, name, rows, cols, f64 values),
//! little-endian throughout. Round-trips are bit-exact.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::config::{ExperimentConfig, KvMap, ModelVariant};
use crate::datagen::Dataset;
use crate::model::{ModelError, ModelParams};
use crate::scalar::Scalar;

pub const CKPT_MAGIC: &[u8; 8] = b"UDONCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to rebuild a model: the config echo (with `seed` and
/// `step` entries) plus named parameter tensors.
pub struct Checkpoint<S> {
    pub config_echo: String,
    pub params: ModelParams<S>,
    pub seed: u64,
    pub step: u64,
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &ModelParams<S>,
    config_echo: &str,
    seed: u64,
    step: u64,
) -> Result<(), CkptError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(CKPT_MAGIC)?;
    buf.write_u32::<LittleEndian>(CKPT_VERSION)?;
    let echo = format!("{config_echo}run_seed = {seed}\nrun_step = {step}\n");
    buf.write_u32::<LittleEndian>(echo.len() as u32)?;
    buf.write_all(echo.as_bytes())?;
    for (name, tensor) in params.iter() {
        buf.write_u32::<LittleEndian>(name.len() as u32)?;
        buf.write_all(name.as_bytes())?;
        buf.write_u32::<LittleEndian>(tensor.rows as u32)?;
        buf.write_u32::<LittleEndian>(tensor.cols as u32)?;
        for &v in &tensor.data {
            buf.write_f64::<LittleEndian>(v.to_f64_c())?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path, dataset: &Dataset) -> Result<Checkpoint<S>, CkptError> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(bytes.as_slice());
    let fmt = |cur: &Cursor<&[u8]>, what: String| CkptError::Format { offset: cur.position(), what };

    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| fmt(&cur, "truncated magic".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(CkptError::Format { offset: 0, what: format!("bad magic {magic:?}") });
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| fmt(&cur, "truncated version".into()))?;
    if version != CKPT_VERSION {
        return Err(fmt(&cur, format!("unsupported version {version}")));
    }
    let echo_len = cur.read_u32::<LittleEndian>().map_err(|_| fmt(&cur, "truncated echo length".into()))? as usize;
    let mut echo_bytes = vec![0u8; echo_len];
    cur.read_exact(&mut echo_bytes).map_err(|_| fmt(&cur, "truncated config echo".into()))?;
    let config_echo = String::from_utf8(echo_bytes).map_err(|_| fmt(&cur, "config echo is not utf-8".into()))?;

    let kv = KvMap::parse_text(&config_echo)?;
    let seed = kv.get("run_seed").and_then(|v| v.parse().ok()).unwrap_or(0);
    let step = kv.get("run_step").and_then(|v| v.parse().ok()).unwrap_or(0);
    let variant = kv
        .get("model_variant")
        .map(|v| ModelVariant::parse(v).ok_or_else(|| fmt(&cur, format!("unknown model_variant `{v}`"))))
        .transpose()?
        .unwrap_or(ModelVariant::Main);
    let exp = ExperimentConfig::from_kv(&kv)?;
    let mut params = ModelParams::<S>::zeroed(exp.variant_model_config(dataset, variant))?;

    let mut filled = vec![false; params.num_tensors()];
    loop {
        let name_len = match cur.read_u32::<LittleEndian>() {
            Ok(v) => v as usize,
            Err(_) => break, // clean end of file
        };
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes).map_err(|_| fmt(&cur, "truncated tensor name".into()))?;
        let name = String::from_utf8(name_bytes).map_err(|_| fmt(&cur, "tensor name is not utf-8".into()))?;
        let rows = cur.read_u32::<LittleEndian>().map_err(|_| fmt(&cur, format!("truncated rows for {name}")))? as usize;
        let cols = cur.read_u32::<LittleEndian>().map_err(|_| fmt(&cur, format!("truncated cols for {name}")))? as usize;
        let slot = params
            .slot_by_name(&name)
            .ok_or_else(|| fmt(&cur, format!("unknown tensor `{name}` for this config")))?;
        {
            let t = params.tensor(slot);
            if (t.rows, t.cols) != (rows, cols) {
                return Err(fmt(
                    &cur,
                    format!("tensor `{name}` is {rows}x{cols}, config expects {}x{}", t.rows, t.cols),
                ));
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| fmt(&cur, format!("truncated values for {name}")))?;
            data.push(S::from_f64_c(v));
        }
        params.tensor_mut(slot).data = data;
        filled[slot] = true;
    }
    if let Some(missing) = filled.iter().position(|&f| !f) {
        return Err(fmt(&cur, format!("tensor `{}` missing from checkpoint", params.name(missing))));
    }

    Ok(Checkpoint { config_echo, params, seed, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::datagen::{generate_multidomain, CueMode, DomainSpec, GeneratorConfig, SplitFractions};
    use crate::model::init_params;
    use tempfile::tempdir;

    fn tiny_dataset() -> Dataset {
        generate_multidomain(&GeneratorConfig {
            feature_dim: 12,
            shared_dims: 2,
            cue_dims: 2,
            split_fractions: SplitFractions::default(),
            seed: 3,
            domains: vec![
                DomainSpec {
                    domain_id: 0,
                    num_classes: 3,
                    class_size_exponent: 0.0,
                    samples_per_class_base: 20,
                    cue_mode: CueMode::Discriminative,
                    noise_sigma: 0.2,
                },
                DomainSpec {
                    domain_id: 1,
                    num_classes: 4,
                    class_size_exponent: 0.0,
                    samples_per_class_base: 20,
                    cue_mode: CueMode::Noise,
                    noise_sigma: 0.2,
                },
            ],
        })
        .unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        let kv = KvMap::parse_text("backbone_hidden = 16\nbackbone_out = 16\nstudent_dim = 4\nteacher_dim = 8\n").unwrap();
        ExperimentConfig::from_kv(&kv).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let params = init_params::<f64>(cfg.model_config(&ds), 123).unwrap();
        save_checkpoint(&path, &params, &cfg.echo(), 123, 500).unwrap();

        let loaded = load_checkpoint::<f64>(&path, &ds).unwrap();
        assert_eq!(loaded.seed, 123);
        assert_eq!(loaded.step, 500);
        for slot in 0..params.num_tensors() {
            let a = params.tensor(slot);
            let b = loaded.params.tensor(slot);
            assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                       "tensor {} differs", params.name(slot));
        }

        // Saving the loaded params again yields byte-identical files.
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&path2, &loaded.params, &cfg.echo(), 123, 500).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let params = init_params::<f64>(cfg.model_config(&ds), 1).unwrap();
        save_checkpoint(&path, &params, &cfg.echo(), 1, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path, &ds), Err(CkptError::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ds = tiny_dataset();
        let cfg = tiny_config();
        let params = init_params::<f64>(cfg.model_config(&ds), 1).unwrap();
        save_checkpoint(&path, &params, &cfg.echo(), 1, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path, &ds), Err(CkptError::Format { .. })));
    }
}
