//! Experiment configuration: flat key=value files, environment overrides
//! (`UDON_<KEY>`), and command-line `--set key=value` overrides, resolved in
//! that order. The fully resolved config is echoed into every output so runs
//! can be reproduced from their artifacts alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::datagen::{CueMode, Dataset, DomainSpec, GeneratorConfig, SplitFractions};
use crate::losses::{LossFlags, RelNorm};
use crate::model::{ModelConfig, ProjectorKind};
use crate::optim::AdamConfig;
use crate::sampler::{LossSource, SamplerConfig, SamplerKind};

pub const ENV_PREFIX: &str = "UDON_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config line {line} is not `key = value`: {text}")]
    BadLine { line: usize, text: String },
    #[error("key `{key}`: {what}")]
    BadValue { key: String, what: String },
    #[error("inconsistent config: {0}")]
    Inconsistent(String),
}

/// Ordered key=value map with typed accessors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap {
    map: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::BadLine { line: i + 1, text: raw.to_string() });
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvMap { map })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse_text(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    /// Applies `UDON_<KEY>` environment variables on top of file values.
    pub fn apply_env(&mut self) {
        for (name, value) in std::env::vars() {
            if let Some(suffix) = name.strip_prefix(ENV_PREFIX) {
                self.map.insert(suffix.to_lowercase(), value);
            }
        }
    }

    /// Applies `key=value` strings (CLI overrides, highest precedence).
    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                return Err(ConfigError::BadLine { line: 0, text: s.clone() });
            };
            self.map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue { key: key.into(), what: format!("`{v}` is not an integer") }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.u64_or(key, default as u64)? as usize)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue { key: key.into(), what: format!("`{v}` is not a number") }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(ConfigError::BadValue { key: key.into(), what: format!("`{v}` is not a boolean") }),
        }
    }

    fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| ConfigError::BadValue { key: key.into(), what: format!("`{v}` is not a number list") }),
        }
    }

    fn list_usize_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some("") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| ConfigError::BadValue { key: key.into(), what: format!("`{v}` is not an integer list") }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Udon,
    BaselineClsOnly,
    OfflineDistill8,
    OfflineDistill1,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Udon => "udon",
            Mode::BaselineClsOnly => "baseline_cls_only",
            Mode::OfflineDistill8 => "offline_distill_8",
            Mode::OfflineDistill1 => "offline_distill_1",
        }
    }
}

/// Which model layout a checkpoint holds: the main trained model, a
/// teacher-only multi-head model, or one single-domain specialist.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelVariant {
    Main,
    TeacherOnly,
    Specialist(usize),
}

impl ModelVariant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "main" => Some(ModelVariant::Main),
            "teacher_only" => Some(ModelVariant::TeacherOnly),
            other => other.strip_prefix("specialist_").and_then(|d| d.parse().ok().map(ModelVariant::Specialist)),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub steps: u64,
    pub phase1_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub eval_every: u64,

    pub temperature: f64,
    pub rel_norm: RelNorm,
    pub no_logit_distill: bool,
    pub no_any_distill: bool,
    pub no_student_ce: bool,

    pub sampler: SamplerKind,
    pub refresh_period: usize,
    pub loss_source: LossSource,
    pub static_weights: Option<Vec<f64>>,
    pub min_prob: f64,
    pub class_balanced: bool,

    pub backbone_hidden: Vec<usize>,
    pub backbone_out: usize,
    pub student_dim: usize,
    pub teacher_dim: usize,
    pub projector_kind: ProjectorKind,
    pub classifier_temperature: f64,
    pub mlp_baseline: bool,

    pub data_path: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

fn parse_enum<'a, T: Copy>(key: &str, value: &'a str, table: &[(&str, T)]) -> Result<T, ConfigError> {
    table
        .iter()
        .find(|(name, _)| *name == value)
        .map(|&(_, v)| v)
        .ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            what: format!(
                "`{value}` is not one of {}",
                table.iter().map(|(n, _)| *n).collect::<Vec<_>>().join("|")
            ),
        })
}

impl ExperimentConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self, ConfigError> {
        let mode = parse_enum(
            "mode",
            kv.get("mode").unwrap_or("udon"),
            &[
                ("udon", Mode::Udon),
                ("baseline_cls_only", Mode::BaselineClsOnly),
                ("offline_distill_8", Mode::OfflineDistill8),
                ("offline_distill_1", Mode::OfflineDistill1),
            ],
        )?;
        let steps = kv.u64_or("steps", 1000)?;
        let cfg = ExperimentConfig {
            mode,
            steps,
            phase1_steps: kv.u64_or("phase1_steps", steps)?,
            batch_size: kv.usize_or("batch_size", 128)?,
            lr: kv.f64_or("lr", 1e-3)?,
            seeds: kv
                .list_f64("seeds")?
                .map(|v| v.into_iter().map(|x| x as u64).collect())
                .unwrap_or_else(|| vec![0, 1, 2]),
            eval_every: kv.u64_or("eval_every", 0)?,
            temperature: kv.f64_or("temperature", 0.1)?,
            rel_norm: parse_enum(
                "rel_norm",
                kv.get("rel_norm").unwrap_or("raw"),
                &[("raw", RelNorm::Raw), ("mean", RelNorm::Mean)],
            )?,
            no_logit_distill: kv.bool_or("no_logit_distill", false)?,
            no_any_distill: kv.bool_or("no_any_distill", false)?,
            no_student_ce: kv.bool_or("no_student_ce", false)?,
            sampler: parse_enum(
                "sampler",
                kv.get("sampler").unwrap_or("dynamic"),
                &[
                    ("round_robin", SamplerKind::RoundRobin),
                    ("dataset_size", SamplerKind::DatasetSize),
                    ("static_weights", SamplerKind::StaticWeights),
                    ("dynamic", SamplerKind::Dynamic),
                ],
            )?,
            refresh_period: kv.usize_or("refresh_period", 50)?,
            loss_source: parse_enum(
                "loss_source",
                kv.get("loss_source").unwrap_or("teacher_cls"),
                &[("teacher_cls", LossSource::TeacherCls), ("student_cls", LossSource::StudentCls)],
            )?,
            static_weights: kv.list_f64("static_weights")?,
            min_prob: kv.f64_or("min_prob", 0.0)?,
            class_balanced: kv.bool_or("class_balanced", false)?,
            backbone_hidden: kv.list_usize_or("backbone_hidden", &[256, 256])?,
            backbone_out: kv.usize_or("backbone_out", 256)?,
            student_dim: kv.usize_or("student_dim", 64)?,
            teacher_dim: kv.usize_or("teacher_dim", 256)?,
            projector_kind: parse_enum(
                "projector_kind",
                kv.get("projector_kind").unwrap_or("linear"),
                &[("linear", ProjectorKind::Linear), ("mlp_one_hidden", ProjectorKind::MlpOneHidden)],
            )?,
            classifier_temperature: kv.f64_or("classifier_temperature", 0.05)?,
            mlp_baseline: kv.bool_or("mlp_baseline", false)?,
            data_path: kv.get("data").map(PathBuf::from),
            generator: generator_from_kv(kv)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size < 2 {
            return Err(ConfigError::Inconsistent("batch_size must be at least 2".into()));
        }
        if self.steps == 0 {
            return Err(ConfigError::Inconsistent("steps must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Inconsistent("seeds must not be empty".into()));
        }
        if self.temperature <= 0.0 {
            return Err(ConfigError::Inconsistent("temperature must be positive".into()));
        }
        if self.mode == Mode::BaselineClsOnly && self.no_student_ce {
            return Err(ConfigError::Inconsistent(
                "baseline_cls_only with no_student_ce leaves no loss terms".into(),
            ));
        }
        Ok(())
    }

    /// Loss-term switches for the configured mode. `no_any_distill` implies
    /// `no_logit_distill`.
    pub fn loss_flags(&self) -> LossFlags {
        let teachers = self.mode == Mode::Udon;
        LossFlags {
            teacher_cls: teachers,
            student_cls: !self.no_student_ce,
            rel: teachers && !self.no_any_distill,
            logit: teachers && !self.no_any_distill && !self.no_logit_distill,
        }
    }

    /// Sampler settings; modes without teacher heads fall back to the
    /// student classification loss as the dynamic signal.
    pub fn sampler_config(&self) -> SamplerConfig {
        let loss_source = if self.mode == Mode::Udon { self.loss_source } else { LossSource::StudentCls };
        SamplerConfig {
            kind: self.sampler,
            refresh_period: self.refresh_period,
            loss_source,
            static_weights: self.static_weights.clone(),
            min_prob: self.min_prob,
            class_balanced: self.class_balanced,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..Default::default() }
    }

    /// Model layout for the main trained model of this mode.
    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        self.variant_model_config(dataset, ModelVariant::Main)
    }

    /// Model layout for a checkpoint variant: the main model, the
    /// teacher-only phase-1 model, or a single-domain specialist.
    pub fn variant_model_config(&self, dataset: &Dataset, variant: ModelVariant) -> ModelConfig {
        let base = ModelConfig {
            input_dim: dataset.feature_dim,
            backbone_hidden_dims: self.backbone_hidden.clone(),
            backbone_out_dim: self.backbone_out,
            student_dim: self.student_dim,
            teacher_dim: self.teacher_dim,
            num_domains: dataset.num_domains(),
            classes_per_domain: dataset.classes_per_domain.clone(),
            projector_kind: self.projector_kind,
            classifier_temperature: self.classifier_temperature,
            mlp_baseline: self.mlp_baseline,
            include_student_head: true,
            include_teacher_heads: self.mode == Mode::Udon,
        };
        match variant {
            ModelVariant::Main => base,
            ModelVariant::TeacherOnly => ModelConfig {
                include_student_head: false,
                include_teacher_heads: true,
                mlp_baseline: false,
                ..base
            },
            ModelVariant::Specialist(domain) => ModelConfig {
                num_domains: 1,
                classes_per_domain: vec![dataset.classes_per_domain[domain]],
                include_student_head: false,
                include_teacher_heads: true,
                mlp_baseline: false,
                ..base
            },
        }
    }

    /// Canonical echo of every resolved value, sorted by key.
    pub fn echo(&self) -> String {
        let mut kv = KvMap::new();
        kv.set("mode", self.mode.as_str());
        kv.set("steps", self.steps.to_string());
        kv.set("phase1_steps", self.phase1_steps.to_string());
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("lr", format!("{:e}", self.lr));
        kv.set("seeds", join(&self.seeds));
        kv.set("eval_every", self.eval_every.to_string());
        kv.set("temperature", self.temperature.to_string());
        kv.set("rel_norm", if self.rel_norm == RelNorm::Raw { "raw" } else { "mean" });
        kv.set("no_logit_distill", self.no_logit_distill.to_string());
        kv.set("no_any_distill", self.no_any_distill.to_string());
        kv.set("no_student_ce", self.no_student_ce.to_string());
        kv.set(
            "sampler",
            match self.sampler {
                SamplerKind::RoundRobin => "round_robin",
                SamplerKind::DatasetSize => "dataset_size",
                SamplerKind::StaticWeights => "static_weights",
                SamplerKind::Dynamic => "dynamic",
            },
        );
        kv.set("refresh_period", self.refresh_period.to_string());
        kv.set(
            "loss_source",
            match self.loss_source {
                LossSource::TeacherCls => "teacher_cls",
                LossSource::StudentCls => "student_cls",
            },
        );
        kv.set("static_weights", self.static_weights.as_ref().map(|w| join(w)).unwrap_or_default());
        kv.set("min_prob", self.min_prob.to_string());
        kv.set("class_balanced", self.class_balanced.to_string());
        kv.set("backbone_hidden", join(&self.backbone_hidden));
        kv.set("backbone_out", self.backbone_out.to_string());
        kv.set("student_dim", self.student_dim.to_string());
        kv.set("teacher_dim", self.teacher_dim.to_string());
        kv.set(
            "projector_kind",
            if self.projector_kind == ProjectorKind::Linear { "linear" } else { "mlp_one_hidden" },
        );
        kv.set("classifier_temperature", self.classifier_temperature.to_string());
        kv.set("mlp_baseline", self.mlp_baseline.to_string());
        if let Some(p) = &self.data_path {
            kv.set("data", p.display().to_string());
        }
        let g = &self.generator;
        kv.set("gen_feature_dim", g.feature_dim.to_string());
        kv.set("gen_shared_dims", g.shared_dims.to_string());
        kv.set("gen_cue_dims", g.cue_dims.to_string());
        let f = g.split_fractions;
        kv.set("gen_split", format!("{},{},{},{},{}", f.train, f.val_query, f.val_index, f.test_query, f.test_index));
        kv.set("gen_seed", g.seed.to_string());
        kv.set("gen_domains", g.domains.len().to_string());
        for d in &g.domains {
            kv.set(
                &format!("gen_domain_{}", d.domain_id),
                format!(
                    "{},{},{},{},{}",
                    d.num_classes,
                    d.class_size_exponent,
                    d.samples_per_class_base,
                    match d.cue_mode {
                        CueMode::Discriminative => "discriminative",
                        CueMode::Noise => "noise",
                    },
                    d.noise_sigma
                ),
            );
        }
        let mut out = String::new();
        for k in kv.keys() {
            out.push_str(&format!("{k} = {}\n", kv.get(k).unwrap()));
        }
        out
    }

    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.echo().as_bytes()))
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Default four-domain benchmark: three balanced domains and one long-tail
/// domain with many classes, mixing cue-discriminative and cue-noise roles.
pub fn default_generator() -> GeneratorConfig {
    GeneratorConfig {
        feature_dim: 64,
        shared_dims: 8,
        cue_dims: 12,
        split_fractions: SplitFractions::default(),
        seed: 7,
        domains: vec![
            DomainSpec {
                domain_id: 0,
                num_classes: 40,
                class_size_exponent: 0.0,
                samples_per_class_base: 60,
                cue_mode: CueMode::Discriminative,
                noise_sigma: 0.40,
            },
            DomainSpec {
                domain_id: 1,
                num_classes: 40,
                class_size_exponent: 0.0,
                samples_per_class_base: 60,
                cue_mode: CueMode::Discriminative,
                noise_sigma: 0.40,
            },
            DomainSpec {
                domain_id: 2,
                num_classes: 40,
                class_size_exponent: 0.0,
                samples_per_class_base: 60,
                cue_mode: CueMode::Noise,
                noise_sigma: 0.40,
            },
            DomainSpec {
                domain_id: 3,
                num_classes: 120,
                class_size_exponent: 1.2,
                samples_per_class_base: 1000,
                cue_mode: CueMode::Noise,
                noise_sigma: 0.55,
            },
        ],
    }
}

fn generator_from_kv(kv: &KvMap) -> Result<GeneratorConfig, ConfigError> {
    let defaults = default_generator();
    let n = kv.usize_or("gen_domains", defaults.domains.len())?;
    let split = match kv.list_f64("gen_split")? {
        None => defaults.split_fractions,
        Some(v) if v.len() == 5 => SplitFractions {
            train: v[0],
            val_query: v[1],
            val_index: v[2],
            test_query: v[3],
            test_index: v[4],
        },
        Some(v) => {
            return Err(ConfigError::BadValue {
                key: "gen_split".into(),
                what: format!("expected 5 fractions, got {}", v.len()),
            })
        }
    };
    let mut domains = Vec::with_capacity(n);
    for i in 0..n {
        let key = format!("gen_domain_{i}");
        let spec = match kv.get(&key) {
            None => defaults.domains.get(i).cloned().ok_or_else(|| ConfigError::BadValue {
                key: key.clone(),
                what: "missing domain spec".into(),
            })?,
            Some(v) => parse_domain_spec(&key, i as u16, v)?,
        };
        domains.push(spec);
    }
    Ok(GeneratorConfig {
        feature_dim: kv.usize_or("gen_feature_dim", defaults.feature_dim)?,
        shared_dims: kv.usize_or("gen_shared_dims", defaults.shared_dims)?,
        cue_dims: kv.usize_or("gen_cue_dims", defaults.cue_dims)?,
        split_fractions: split,
        seed: kv.u64_or("gen_seed", defaults.seed)?,
        domains,
    })
}

/// Domain spec value: `classes,zipf_exponent,base,cue_mode,noise_sigma`.
fn parse_domain_spec(key: &str, domain_id: u16, value: &str) -> Result<DomainSpec, ConfigError> {
    let parts: Vec<&str> = value.split(',').map(|s| s.trim()).collect();
    if parts.len() != 5 {
        return Err(ConfigError::BadValue {
            key: key.into(),
            what: format!("expected `classes,zipf,base,cue,sigma`, got `{value}`"),
        });
    }
    let bad = |what: String| ConfigError::BadValue { key: key.into(), what };
    Ok(DomainSpec {
        domain_id,
        num_classes: parts[0].parse().map_err(|_| bad(format!("`{}` is not a class count", parts[0])))?,
        class_size_exponent: parts[1].parse().map_err(|_| bad(format!("`{}` is not an exponent", parts[1])))?,
        samples_per_class_base: parts[2].parse().map_err(|_| bad(format!("`{}` is not a base size", parts[2])))?,
        cue_mode: match parts[3] {
            "discriminative" => CueMode::Discriminative,
            "noise" => CueMode::Noise,
            other => return Err(bad(format!("`{other}` is not discriminative|noise"))),
        },
        noise_sigma: parts[4].parse().map_err(|_| bad(format!("`{}` is not a sigma", parts[4])))?,
    })
}

/// Loads a config with full precedence: file, then environment, then CLI sets.
pub fn load_config(path: &Path, sets: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut kv = KvMap::from_file(path)?;
    kv.apply_env();
    kv.apply_sets(sets)?;
    ExperimentConfig::from_kv(&kv)
}
