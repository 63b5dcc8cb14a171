//! Domain-selection policies for clean single-domain batches.
//!
//! Round-Robin walks the domains cyclically. Dataset-size and static-weight
//! sampling draw from a fixed categorical distribution. The dynamic policy
//! draws each domain proportionally to its windowed mean training loss,
//! refreshed every `refresh_period` steps: domains that are learned slower
//! keep a higher loss and are sampled more often.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datagen::{Dataset, SplitTag};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("recorded loss for domain {domain} is not finite")]
    NonFiniteLoss { domain: usize },
    #[error("recorded loss for domain {domain} is negative: {value}")]
    NegativeLoss { domain: usize, value: f64 },
    #[error("domain {domain} out of range for {domains} domains")]
    DomainOutOfRange { domain: usize, domains: usize },
    #[error("domain {domain} has no training examples")]
    EmptyDomain { domain: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    RoundRobin,
    DatasetSize,
    StaticWeights,
    Dynamic,
}

/// Which classification loss feeds the dynamic sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossSource {
    TeacherCls,
    StudentCls,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub refresh_period: usize,
    pub loss_source: LossSource,
    /// Weights for `StaticWeights`; normalized at construction.
    pub static_weights: Option<Vec<f64>>,
    /// Optional probability floor applied after each refresh (default 0).
    pub min_prob: f64,
    /// Sample classes uniformly first, then an example within the class.
    pub class_balanced: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Dynamic,
            refresh_period: 50,
            loss_source: LossSource::TeacherCls,
            static_weights: None,
            min_prob: 0.0,
            class_balanced: false,
        }
    }
}

/// Mutable sampler state owned by the training loop.
pub struct SamplerState {
    pub kind: SamplerKind,
    pub loss_source: LossSource,
    probs: Vec<f64>,
    prev_mean: Vec<f64>,
    win_sum: Vec<f64>,
    win_count: Vec<u64>,
    steps_since_refresh: usize,
    refresh_period: usize,
    min_prob: f64,
    rr_pos: usize,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(
        cfg: &SamplerConfig,
        num_domains: usize,
        train_sizes: &[usize],
        seed: u64,
    ) -> Result<Self, SamplerError> {
        if num_domains == 0 {
            return Err(SamplerError::InvalidConfig("no domains".into()));
        }
        if train_sizes.len() != num_domains {
            return Err(SamplerError::InvalidConfig(format!(
                "{} train sizes for {} domains",
                train_sizes.len(),
                num_domains
            )));
        }
        if !(0.0..1.0).contains(&cfg.min_prob) {
            return Err(SamplerError::InvalidConfig(format!("min_prob {} outside [0, 1)", cfg.min_prob)));
        }
        let probs = match cfg.kind {
            SamplerKind::RoundRobin | SamplerKind::Dynamic => {
                vec![1.0 / num_domains as f64; num_domains]
            }
            SamplerKind::DatasetSize => {
                let total: usize = train_sizes.iter().sum();
                if total == 0 {
                    return Err(SamplerError::InvalidConfig("all domains empty".into()));
                }
                train_sizes.iter().map(|&s| s as f64 / total as f64).collect()
            }
            SamplerKind::StaticWeights => {
                let w = cfg
                    .static_weights
                    .as_ref()
                    .ok_or_else(|| SamplerError::InvalidConfig("static_weights sampler needs weights".into()))?;
                if w.len() != num_domains {
                    return Err(SamplerError::InvalidConfig(format!(
                        "{} static weights for {} domains",
                        w.len(),
                        num_domains
                    )));
                }
                if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(SamplerError::InvalidConfig("static weights must be finite and non-negative".into()));
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return Err(SamplerError::InvalidConfig("static weights sum to zero".into()));
                }
                w.iter().map(|&v| v / total).collect()
            }
        };
        Ok(SamplerState {
            kind: cfg.kind,
            loss_source: cfg.loss_source,
            probs,
            prev_mean: vec![1.0; num_domains],
            win_sum: vec![0.0; num_domains],
            win_count: vec![0; num_domains],
            steps_since_refresh: 0,
            refresh_period: cfg.refresh_period.max(1),
            min_prob: cfg.min_prob,
            rr_pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn num_domains(&self) -> usize {
        self.probs.len()
    }

    /// Current domain-selection distribution.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Accumulates one batch loss into the domain's current window.
    pub fn record_loss(&mut self, domain: usize, loss: f64) -> Result<(), SamplerError> {
        if domain >= self.num_domains() {
            return Err(SamplerError::DomainOutOfRange { domain, domains: self.num_domains() });
        }
        if !loss.is_finite() {
            return Err(SamplerError::NonFiniteLoss { domain });
        }
        if loss < 0.0 {
            return Err(SamplerError::NegativeLoss { domain, value: loss });
        }
        self.win_sum[domain] += loss;
        self.win_count[domain] += 1;
        Ok(())
    }

    /// Mean recorded loss per domain in the current window, falling back to
    /// the previous window's mean for domains that were not sampled.
    pub fn window_means(&self) -> Vec<f64> {
        (0..self.num_domains())
            .map(|m| {
                if self.win_count[m] > 0 {
                    self.win_sum[m] / self.win_count[m] as f64
                } else {
                    self.prev_mean[m]
                }
            })
            .collect()
    }

    /// True once `refresh_period` domain selections have happened since the
    /// last refresh.
    pub fn due_refresh(&self) -> bool {
        self.steps_since_refresh >= self.refresh_period
    }

    /// Recomputes P proportional to the windowed mean losses and resets the
    /// window. Only meaningful for the dynamic policy; other policies keep
    /// their distribution.
    pub fn refresh_probabilities(&mut self) -> &[f64] {
        if self.kind == SamplerKind::Dynamic {
            let means = self.window_means();
            let total: f64 = means.iter().sum();
            if total > 0.0 {
                for (p, &m) in self.probs.iter_mut().zip(means.iter()) {
                    *p = m / total;
                }
            } else {
                // No history at all: keep uniform.
                let n = self.num_domains() as f64;
                self.probs.iter_mut().for_each(|p| *p = 1.0 / n);
            }
            if self.min_prob > 0.0 {
                let mut clipped: f64 = 0.0;
                for p in self.probs.iter_mut() {
                    if *p < self.min_prob {
                        clipped += self.min_prob - *p;
                        *p = self.min_prob;
                    }
                }
                if clipped > 0.0 {
                    let excess: f64 = self.probs.iter().filter(|&&p| p > self.min_prob).map(|&p| p - self.min_prob).sum();
                    if excess > 0.0 {
                        for p in self.probs.iter_mut() {
                            if *p > self.min_prob {
                                *p -= clipped * (*p - self.min_prob) / excess;
                            }
                        }
                    }
                }
            }
            self.prev_mean = means;
        }
        self.win_sum.iter_mut().for_each(|s| *s = 0.0);
        self.win_count.iter_mut().for_each(|c| *c = 0);
        self.steps_since_refresh = 0;
        &self.probs
    }

    /// Picks the domain of the next batch.
    pub fn next_domain(&mut self) -> usize {
        self.steps_since_refresh += 1;
        match self.kind {
            SamplerKind::RoundRobin => {
                let d = self.rr_pos;
                self.rr_pos = (self.rr_pos + 1) % self.num_domains();
                d
            }
            _ => {
                let u: f64 = self.rng.gen::<f64>();
                let mut acc = 0.0;
                for (i, &p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                self.num_domains() - 1
            }
        }
    }
}

/// Per-(domain, split) example index lists, built once per dataset.
pub struct DomainSplits {
    per_domain: Vec<[Vec<usize>; 5]>,
    /// Training examples grouped by class, for class-balanced batches.
    train_by_class: Vec<Vec<Vec<usize>>>,
}

impl DomainSplits {
    pub fn new(dataset: &Dataset) -> Self {
        let n = dataset.num_domains();
        let mut per_domain: Vec<[Vec<usize>; 5]> = (0..n).map(|_| Default::default()).collect();
        let mut train_by_class: Vec<Vec<Vec<usize>>> = dataset
            .classes_per_domain
            .iter()
            .map(|&c| vec![Vec::new(); c as usize])
            .collect();
        for (i, e) in dataset.examples.iter().enumerate() {
            per_domain[e.domain_id as usize][e.split.as_u8() as usize].push(i);
            if e.split == SplitTag::Train {
                train_by_class[e.domain_id as usize][e.class_id as usize].push(i);
            }
        }
        DomainSplits { per_domain, train_by_class }
    }

    pub fn indices(&self, domain: usize, split: SplitTag) -> &[usize] {
        &self.per_domain[domain][split.as_u8() as usize]
    }

    pub fn train_sizes(&self) -> Vec<usize> {
        self.per_domain.iter().map(|d| d[0].len()).collect()
    }
}

/// Draws a clean batch of `b` training examples from one domain, uniformly
/// with replacement (or class-balanced when requested). Returns example
/// indices into the dataset.
pub fn make_batch(
    splits: &DomainSplits,
    domain: usize,
    b: usize,
    class_balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, SamplerError> {
    if domain >= splits.per_domain.len() {
        return Err(SamplerError::DomainOutOfRange { domain, domains: splits.per_domain.len() });
    }
    let train = splits.indices(domain, SplitTag::Train);
    if train.is_empty() {
        return Err(SamplerError::EmptyDomain { domain });
    }
    let mut batch = Vec::with_capacity(b);
    if class_balanced {
        let classes: Vec<&Vec<usize>> =
            splits.train_by_class[domain].iter().filter(|c| !c.is_empty()).collect();
        for _ in 0..b {
            let class = classes[rng.gen_range(0..classes.len())];
            batch.push(class[rng.gen_range(0..class.len())]);
        }
    } else {
        for _ in 0..b {
            batch.push(train[rng.gen_range(0..train.len())]);
        }
    }
    Ok(batch)
}
