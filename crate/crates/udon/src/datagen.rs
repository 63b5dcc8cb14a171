//! Synthetic multi-domain dataset generation and the on-disk dataset format.
//!
//! Each domain's classes are Gaussian clusters living in three feature
//! blocks: a shared block that is class-informative for every domain, a cue
//! block that carries class signal only in `Discriminative` domains (pure
//! noise elsewhere), and a per-domain block owned by one domain. The cue
//! block makes a single linear embedding suboptimal across domains. Class
//! sizes follow a truncated Zipf law so a domain can be long-tailed.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const DATASET_MAGIC: &[u8; 8] = b"UDONDS1\n";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },
    #[error("generation error in domain {domain} class {class}: {what}")]
    Generation { domain: u16, class: u32, what: String },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

/// Split membership of an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    ValQuery,
    ValIndex,
    TestQuery,
    TestIndex,
}

impl SplitTag {
    pub const ALL: [SplitTag; 5] = [
        SplitTag::Train,
        SplitTag::ValQuery,
        SplitTag::ValIndex,
        SplitTag::TestQuery,
        SplitTag::TestIndex,
    ];

    pub fn as_u8(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::ValQuery => 1,
            SplitTag::ValIndex => 2,
            SplitTag::TestQuery => 3,
            SplitTag::TestIndex => 4,
        }
    }

    pub fn from_u8(v: u8) -> Option<SplitTag> {
        SplitTag::ALL.get(v as usize).copied()
    }
}

/// How the cue block behaves in one domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CueMode {
    /// Cue block carries class signal in this domain.
    Discriminative,
    /// Cue block is i.i.d. noise, independent of the class label.
    Noise,
}

#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub domain_id: u16,
    pub num_classes: u32,
    /// Zipf exponent for class sizes; 0 gives balanced classes.
    pub class_size_exponent: f64,
    pub samples_per_class_base: u32,
    pub cue_mode: CueMode,
    pub noise_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val_query: f64,
    pub val_index: f64,
    pub test_query: f64,
    pub test_index: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.70, val_query: 0.05, val_index: 0.10, test_query: 0.05, test_index: 0.10 }
    }
}

impl SplitFractions {
    fn as_array(&self) -> [f64; 5] {
        [self.train, self.val_query, self.val_index, self.test_query, self.test_index]
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub feature_dim: usize,
    pub shared_dims: usize,
    pub cue_dims: usize,
    pub split_fractions: SplitFractions,
    pub seed: u64,
    pub domains: Vec<DomainSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub domain_id: u16,
    pub class_id: u32,
    pub split: SplitTag,
    pub features: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub classes_per_domain: Vec<u32>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn num_domains(&self) -> usize {
        self.classes_per_domain.len()
    }

    /// Example indices for one (domain, split) pair, in dataset order.
    pub fn indices(&self, domain: u16, split: SplitTag) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.domain_id == domain && e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks structural invariants; used after reads and generation.
    pub fn validate(&self) -> Result<(), DataError> {
        for (i, e) in self.examples.iter().enumerate() {
            let c = self
                .classes_per_domain
                .get(e.domain_id as usize)
                .copied()
                .ok_or_else(|| DataError::Format {
                    offset: 0,
                    what: format!("example {i} references unknown domain {}", e.domain_id),
                })?;
            if e.class_id >= c {
                return Err(DataError::Format {
                    offset: 0,
                    what: format!("example {i} class {} out of range (domain has {c})", e.class_id),
                });
            }
            if e.features.len() != self.feature_dim {
                return Err(DataError::Format {
                    offset: 0,
                    what: format!("example {i} has {} features, expected {}", e.features.len(), self.feature_dim),
                });
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Format {
                    offset: 0,
                    what: format!("example {i} contains non-finite features"),
                });
            }
        }
        // Every query class must be represented in the matching index split.
        for (qs, is) in [(SplitTag::ValQuery, SplitTag::ValIndex), (SplitTag::TestQuery, SplitTag::TestIndex)] {
            let mut indexed: std::collections::HashSet<(u16, u32)> = std::collections::HashSet::new();
            for e in self.examples.iter().filter(|e| e.split == is) {
                indexed.insert((e.domain_id, e.class_id));
            }
            for e in self.examples.iter().filter(|e| e.split == qs) {
                if !indexed.contains(&(e.domain_id, e.class_id)) {
                    return Err(DataError::Generation {
                        domain: e.domain_id,
                        class: e.class_id,
                        what: format!("{qs:?} example has no counterpart in {is:?}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Truncated-Zipf class sizes: `max(1, round(base * k^-exponent))` for rank k = 1..n.
pub fn zipf_class_sizes(num_classes: u32, exponent: f64, base: u32) -> Vec<u32> {
    assert!(num_classes >= 1 && base >= 1, "zipf_class_sizes requires num_classes >= 1 and base >= 1");
    (1..=num_classes)
        .map(|k| {
            let size = (base as f64) * (k as f64).powf(-exponent);
            (size.round() as u32).max(1)
        })
        .collect()
}

// Distinct per-domain RNG streams derived from the master seed, so generation
// order (or parallelism) across domains cannot change the output.
fn domain_stream(seed: u64, domain_id: u16) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(0x9e3779b97f4a7c15 ^ domain_id as u64)))
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Largest-remainder allocation of `n` samples over the five splits, with a
/// repair step that steals one training example when a query split would be
/// populated without its index split.
fn split_counts(n: u32, fractions: &SplitFractions, domain: u16, class: u32) -> Result<[u32; 5], DataError> {
    let f = fractions.as_array();
    let total: f64 = f.iter().sum();
    if !(0.999..=1.001).contains(&total) || f.iter().any(|&v| v < 0.0) {
        return Err(DataError::InvalidConfig(format!("split fractions must be non-negative and sum to 1, got {f:?}")));
    }
    let mut counts = [0u32; 5];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(5);
    let mut assigned = 0u32;
    for (i, &frac) in f.iter().enumerate() {
        let exact = frac * n as f64;
        counts[i] = exact.floor() as u32;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    // Stable tie-break: larger remainder first, then split order.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = n - assigned;
    for (i, _) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for (q, ix) in [(1usize, 2usize), (3, 4)] {
        if counts[q] > 0 && counts[ix] == 0 {
            if counts[0] > 0 {
                counts[0] -= 1;
                counts[ix] += 1;
            } else if counts[q] > 1 {
                counts[q] -= 1;
                counts[ix] += 1;
            } else {
                return Err(DataError::Generation {
                    domain,
                    class,
                    what: format!("class with {n} sample(s) cannot populate both query and index splits"),
                });
            }
        }
    }
    Ok(counts)
}

/// Deterministic synthetic generation: a pure function of the config.
pub fn generate_multidomain(cfg: &GeneratorConfig) -> Result<Dataset, DataError> {
    if cfg.domains.is_empty() {
        return Err(DataError::InvalidConfig("at least one domain is required".into()));
    }
    if cfg.feature_dim < 2 * (cfg.shared_dims + cfg.cue_dims) {
        return Err(DataError::InvalidConfig(format!(
            "feature_dim {} must be at least 2*(shared_dims {} + cue_dims {})",
            cfg.feature_dim, cfg.shared_dims, cfg.cue_dims
        )));
    }
    for (i, d) in cfg.domains.iter().enumerate() {
        if d.domain_id as usize != i {
            return Err(DataError::InvalidConfig(format!("domain {i} has id {}, ids must be 0..N in order", d.domain_id)));
        }
        if d.num_classes < 2 {
            return Err(DataError::InvalidConfig(format!("domain {i} needs at least 2 classes")));
        }
        if d.class_size_exponent < 0.0 || d.noise_sigma < 0.0 {
            return Err(DataError::InvalidConfig(format!("domain {i}: exponent and sigma must be non-negative")));
        }
    }

    let n_domains = cfg.domains.len();
    let signal_dims = cfg.feature_dim - cfg.shared_dims - cfg.cue_dims;
    let own_block = signal_dims / n_domains;
    if own_block == 0 {
        return Err(DataError::InvalidConfig(format!(
            "feature_dim {} leaves no per-domain dims for {} domains",
            cfg.feature_dim, n_domains
        )));
    }

    let mut examples = Vec::new();
    for spec in &cfg.domains {
        let mut rng = domain_stream(cfg.seed, spec.domain_id);
        let sizes = zipf_class_sizes(spec.num_classes, spec.class_size_exponent, spec.samples_per_class_base);
        let own_start = cfg.shared_dims + cfg.cue_dims + spec.domain_id as usize * own_block;

        // Class centers, drawn in class order.
        let mut centers: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(sizes.len());
        for _ in 0..spec.num_classes {
            let shared: Vec<f64> = (0..cfg.shared_dims).map(|_| standard_normal(&mut rng)).collect();
            let cue: Vec<f64> = (0..cfg.cue_dims).map(|_| standard_normal(&mut rng)).collect();
            let own: Vec<f64> = (0..own_block).map(|_| standard_normal(&mut rng)).collect();
            centers.push((shared, cue, own));
        }

        for (class_id, (&size, (shared, cue, own))) in sizes.iter().zip(centers.iter()).enumerate() {
            let counts = split_counts(size, &cfg.split_fractions, spec.domain_id, class_id as u32)?;
            for (split_idx, &count) in counts.iter().enumerate() {
                let split = SplitTag::ALL[split_idx];
                for _ in 0..count {
                    let mut features = vec![0.0f64; cfg.feature_dim];
                    for (j, &c) in shared.iter().enumerate() {
                        features[j] = c + spec.noise_sigma * standard_normal(&mut rng);
                    }
                    for (j, &c) in cue.iter().enumerate() {
                        features[cfg.shared_dims + j] = match spec.cue_mode {
                            CueMode::Discriminative => c + spec.noise_sigma * standard_normal(&mut rng),
                            CueMode::Noise => standard_normal(&mut rng),
                        };
                    }
                    for (j, &c) in own.iter().enumerate() {
                        features[own_start + j] = c + spec.noise_sigma * standard_normal(&mut rng);
                    }
                    // Foreign per-domain blocks and leftover dims: unit noise.
                    for (j, f) in features.iter_mut().enumerate().skip(cfg.shared_dims + cfg.cue_dims) {
                        if !(own_start..own_start + own_block).contains(&j) {
                            *f = standard_normal(&mut rng);
                        }
                    }
                    examples.push(Example {
                        domain_id: spec.domain_id,
                        class_id: class_id as u32,
                        split,
                        features: features.into_iter().map(|v| v as f32).collect(),
                    });
                }
            }
        }
    }

    let dataset = Dataset {
        feature_dim: cfg.feature_dim,
        classes_per_domain: cfg.domains.iter().map(|d| d.num_classes).collect(),
        examples,
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---- binary format ----

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(DATASET_MAGIC)?;
    buf.write_u32::<LittleEndian>(DATASET_VERSION)?;
    buf.write_u32::<LittleEndian>(dataset.num_domains() as u32)?;
    buf.write_u32::<LittleEndian>(dataset.feature_dim as u32)?;
    for d in 0..dataset.num_domains() {
        buf.write_u32::<LittleEndian>(dataset.classes_per_domain[d])?;
        let count = dataset.examples.iter().filter(|e| e.domain_id as usize == d).count() as u64;
        buf.write_u64::<LittleEndian>(count)?;
    }
    for e in &dataset.examples {
        buf.write_u16::<LittleEndian>(e.domain_id)?;
        buf.write_u32::<LittleEndian>(e.class_id)?;
        buf.write_u8(e.split.as_u8())?;
        for &f in &e.features {
            buf.write_f32::<LittleEndian>(f)?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct CountingReader {
    cur: Cursor<Vec<u8>>,
}

impl CountingReader {
    fn new(bytes: Vec<u8>) -> Self {
        CountingReader { cur: Cursor::new(bytes) }
    }

    fn offset(&self) -> u64 {
        self.cur.position()
    }

    fn err(&self, what: impl Into<String>) -> DataError {
        DataError::Format { offset: self.offset(), what: what.into() }
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<(), DataError> {
        self.cur
            .read_exact(buf)
            .map_err(|_| DataError::Format { offset: self.offset(), what: format!("truncated file while reading {what}") })
    }

    fn u8(&mut self, what: &str) -> Result<u8, DataError> {
        let off = self.offset();
        self.cur
            .read_u8()
            .map_err(|_| DataError::Format { offset: off, what: format!("truncated file while reading {what}") })
    }

    fn u16(&mut self, what: &str) -> Result<u16, DataError> {
        let off = self.offset();
        self.cur
            .read_u16::<LittleEndian>()
            .map_err(|_| DataError::Format { offset: off, what: format!("truncated file while reading {what}") })
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        let off = self.offset();
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| DataError::Format { offset: off, what: format!("truncated file while reading {what}") })
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        let off = self.offset();
        self.cur
            .read_u64::<LittleEndian>()
            .map_err(|_| DataError::Format { offset: off, what: format!("truncated file while reading {what}") })
    }

    fn f32(&mut self, what: &str) -> Result<f32, DataError> {
        let off = self.offset();
        self.cur
            .read_f32::<LittleEndian>()
            .map_err(|_| DataError::Format { offset: off, what: format!("truncated file while reading {what}") })
    }

    fn remaining(&self) -> u64 {
        self.cur.get_ref().len() as u64 - self.offset()
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mut r = CountingReader::new(std::fs::read(path)?);

    let mut magic = [0u8; 8];
    r.exact(&mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Format { offset: 0, what: format!("bad magic {magic:?}") });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let n_domains = r.u32("domain count")? as usize;
    let feature_dim = r.u32("feature dim")? as usize;

    let mut classes_per_domain = Vec::with_capacity(n_domains);
    let mut counts = Vec::with_capacity(n_domains);
    for _ in 0..n_domains {
        classes_per_domain.push(r.u32("class count")?);
        counts.push(r.u64("example count")?);
    }

    let total: u64 = counts.iter().sum();
    let mut examples = Vec::with_capacity(total as usize);
    for _ in 0..total {
        let domain_id = r.u16("domain id")?;
        let class_id = r.u32("class id")?;
        let tag = r.u8("split tag")?;
        let split = SplitTag::from_u8(tag).ok_or_else(|| r.err(format!("invalid split tag {tag}")))?;
        if (domain_id as usize) >= n_domains {
            return Err(r.err(format!("domain id {domain_id} out of range")));
        }
        if class_id >= classes_per_domain[domain_id as usize] {
            return Err(r.err(format!("class id {class_id} out of range for domain {domain_id}")));
        }
        let mut features = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            let f = r.f32("feature value")?;
            if !f.is_finite() {
                return Err(r.err("non-finite feature value"));
            }
            features.push(f);
        }
        examples.push(Example { domain_id, class_id, split, features });
    }
    if r.remaining() != 0 {
        return Err(r.err(format!("{} trailing bytes after last example", r.remaining())));
    }

    let dataset = Dataset { feature_dim, classes_per_domain, examples };
    let end = r.offset();
    dataset.validate().map_err(|e| match e {
        DataError::Format { what, .. } => DataError::Format { offset: end, what },
        other => other,
    })?;
    Ok(dataset)
}

/// Sidecar metadata file: key=value lines echoing the generator config.
pub fn write_metadata(path: &Path, cfg: &GeneratorConfig) -> Result<(), DataError> {
    let mut s = String::new();
    s.push_str(&format!("gen_feature_dim = {}\n", cfg.feature_dim));
    s.push_str(&format!("gen_shared_dims = {}\n", cfg.shared_dims));
    s.push_str(&format!("gen_cue_dims = {}\n", cfg.cue_dims));
    let f = cfg.split_fractions;
    s.push_str(&format!(
        "gen_split = {},{},{},{},{}\n",
        f.train, f.val_query, f.val_index, f.test_query, f.test_index
    ));
    s.push_str(&format!("gen_seed = {}\n", cfg.seed));
    s.push_str(&format!("gen_domains = {}\n", cfg.domains.len()));
    for d in &cfg.domains {
        let cue = match d.cue_mode {
            CueMode::Discriminative => "discriminative",
            CueMode::Noise => "noise",
        };
        s.push_str(&format!(
            "gen_domain_{} = {},{},{},{},{}\n",
            d.domain_id, d.num_classes, d.class_size_exponent, d.samples_per_class_base, cue, d.noise_sigma
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            feature_dim: 16,
            shared_dims: 2,
            cue_dims: 2,
            split_fractions: SplitFractions::default(),
            seed: 42,
            domains: vec![
                DomainSpec {
                    domain_id: 0,
                    num_classes: 4,
                    class_size_exponent: 0.0,
                    samples_per_class_base: 20,
                    cue_mode: CueMode::Discriminative,
                    noise_sigma: 0.2,
                },
                DomainSpec {
                    domain_id: 1,
                    num_classes: 6,
                    class_size_exponent: 1.0,
                    samples_per_class_base: 30,
                    cue_mode: CueMode::Noise,
                    noise_sigma: 0.2,
                },
            ],
        }
    }

    #[test]
    fn zipf_balanced_and_hand_example() {
        assert_eq!(zipf_class_sizes(5, 0.0, 7), vec![7; 5]);
        assert_eq!(zipf_class_sizes(3, 1.0, 6), vec![6, 3, 2]);
    }

    #[test]
    fn zipf_matches_direct_formula_and_is_monotone() {
        let sizes = zipf_class_sizes(100, 1.5, 50);
        for (k, &s) in sizes.iter().enumerate() {
            let expected = ((50.0 * ((k + 1) as f64).powf(-1.5)).round() as u32).max(1);
            assert_eq!(s, expected);
        }
        for w in sizes.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn zipf_sum_equals_generated_examples_per_domain() {
        let cfg = small_config();
        let ds = generate_multidomain(&cfg).unwrap();
        for spec in &cfg.domains {
            let expect: u32 = zipf_class_sizes(spec.num_classes, spec.class_size_exponent, spec.samples_per_class_base)
                .iter()
                .sum();
            let got = ds.examples.iter().filter(|e| e.domain_id == spec.domain_id).count();
            assert_eq!(got as u32, expect);
        }
    }

    #[test]
    fn zero_noise_single_domain_clusters_are_degenerate() {
        let cfg = GeneratorConfig {
            feature_dim: 8,
            shared_dims: 2,
            cue_dims: 2,
            split_fractions: SplitFractions { train: 1.0, val_query: 0.0, val_index: 0.0, test_query: 0.0, test_index: 0.0 },
            seed: 1,
            domains: vec![DomainSpec {
                domain_id: 0,
                num_classes: 2,
                class_size_exponent: 0.0,
                samples_per_class_base: 5,
                cue_mode: CueMode::Discriminative,
                noise_sigma: 0.0,
            }],
        };
        let ds = generate_multidomain(&cfg).unwrap();
        for class in 0..2u32 {
            let members: Vec<&Example> = ds.examples.iter().filter(|e| e.class_id == class).collect();
            for m in &members[1..] {
                assert_eq!(m.features, members[0].features);
            }
        }
        let a = ds.examples.iter().find(|e| e.class_id == 0).unwrap();
        let b = ds.examples.iter().find(|e| e.class_id == 1).unwrap();
        assert_ne!(a.features, b.features);
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let cfg = small_config();
        let a = generate_multidomain(&cfg).unwrap();
        let b = generate_multidomain(&cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 43;
        let c = generate_multidomain(&cfg2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_query_class_is_indexed() {
        let ds = generate_multidomain(&small_config()).unwrap();
        ds.validate().unwrap();
        // Explicit exhaustive check, independent of validate().
        for (qs, is) in [(SplitTag::ValQuery, SplitTag::ValIndex), (SplitTag::TestQuery, SplitTag::TestIndex)] {
            for q in ds.examples.iter().filter(|e| e.split == qs) {
                assert!(ds
                    .examples
                    .iter()
                    .any(|e| e.split == is && e.domain_id == q.domain_id && e.class_id == q.class_id));
            }
        }
    }

    #[test]
    fn infeasible_split_fractions_name_the_class() {
        let mut cfg = small_config();
        cfg.split_fractions =
            SplitFractions { train: 0.0, val_query: 0.5, val_index: 0.0, test_query: 0.5, test_index: 0.0 };
        cfg.domains.truncate(1);
        cfg.domains[0].samples_per_class_base = 1;
        let err = generate_multidomain(&cfg).unwrap_err();
        match err {
            DataError::Generation { domain: 0, class, .. } => assert_eq!(class, 0),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.ds");
        let ds = generate_multidomain(&small_config()).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
        // Write again: byte-identical files.
        let path2 = dir.path().join("d2.ds");
        write_dataset(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.ds");
        let ds = Dataset { feature_dim: 4, classes_per_domain: vec![2], examples: vec![] };
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ds");
        let ds = generate_multidomain(&small_config()).unwrap();
        write_dataset(&path, &ds).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        match read_dataset(&path) {
            Err(DataError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ds");
        let ds = generate_multidomain(&small_config()).unwrap();
        write_dataset(&path, &ds).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        match read_dataset(&path) {
            Err(DataError::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
