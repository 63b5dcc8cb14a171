//! Retrieval evaluation: exact nearest-neighbor search over unit-norm
//! embeddings, Recall@1 and modified mP@5, aggregated per domain with a
//! balanced cross-domain mean.
//!
//! The joint mode pools every domain into a single index, so a query's
//! nearest neighbor can be a wrong-domain distractor. The separate mode
//! restricts each query to its own domain's index, an upper-bound
//! diagnostic.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::datagen::{Dataset, SplitTag};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("embedding dimension mismatch: index {index}, query {query}")]
    DimMismatch { index: usize, query: usize },
    #[error("vector {id} is not unit-norm (norm {norm})")]
    NotUnitNorm { id: usize, norm: f64 },
    #[error("embedding failed: {0}")]
    Embed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// (domain, class) identity of an index or query vector.
pub type Label = (u16, u32);

/// Flat store of unit-norm embeddings with stable contiguous ids.
pub struct EmbeddingIndex<S> {
    dim: usize,
    vectors: Vec<S>,
    labels: Vec<Label>,
}

impl<S: Scalar> EmbeddingIndex<S> {
    pub fn new(dim: usize) -> Self {
        EmbeddingIndex { dim, vectors: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> Label {
        self.labels[id]
    }

    /// Appends a vector; its id is the insertion position.
    pub fn push(&mut self, vector: &[S], label: Label) -> Result<usize, EvalError> {
        if vector.len() != self.dim {
            return Err(EvalError::DimMismatch { index: self.dim, query: vector.len() });
        }
        let norm = vector.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(EvalError::NotUnitNorm { id: self.labels.len(), norm });
        }
        self.vectors.extend_from_slice(vector);
        self.labels.push(label);
        Ok(self.labels.len() - 1)
    }

    /// Exact top-k ids by Euclidean distance (2 - 2cos on unit vectors),
    /// ties broken by ascending id.
    pub fn knn_search(&self, query: &[S], k: usize) -> Result<Vec<usize>, EvalError> {
        if self.is_empty() {
            return Err(EvalError::EmptyIndex);
        }
        if query.len() != self.dim {
            return Err(EvalError::DimMismatch { index: self.dim, query: query.len() });
        }
        let two = S::from_f64_c(2.0);
        let mut scored: Vec<(S, usize)> = (0..self.len())
            .map(|id| {
                let row = &self.vectors[id * self.dim..(id + 1) * self.dim];
                let dot = row.iter().zip(query).map(|(&a, &b)| a * b).sum::<S>();
                (two - two * dot, id)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("non-finite distance").then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, id)| id).collect())
    }

    /// Number of index entries sharing each label.
    pub fn positive_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

/// 1 if the top neighbor shares (domain, class) with the query, else 0.
/// A same-class neighbor from another domain counts as wrong.
pub fn recall_at_1<S: Scalar>(index: &EmbeddingIndex<S>, ranked: &[usize], query_label: Label) -> f64 {
    assert!(!ranked.is_empty(), "recall_at_1 on empty ranking");
    if index.label(ranked[0]) == query_label {
        1.0
    } else {
        0.0
    }
}

/// Precision over the top k' = min(k, n_pos) neighbors, where n_pos counts
/// the index entries sharing the query's label. `None` when n_pos is zero
/// (the query is excluded from its domain's average).
pub fn modified_mp_at_k<S: Scalar>(
    index: &EmbeddingIndex<S>,
    ranked: &[usize],
    query_label: Label,
    n_pos: usize,
    k: usize,
) -> Option<f64> {
    if n_pos == 0 {
        return None;
    }
    let k_eff = k.min(n_pos);
    let correct = ranked.iter().take(k_eff).filter(|&&id| index.label(id) == query_label).count();
    Some(correct as f64 / k_eff as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Val,
    Test,
}

impl EvalSplit {
    pub fn tags(self) -> (SplitTag, SplitTag) {
        match self {
            EvalSplit::Val => (SplitTag::ValQuery, SplitTag::ValIndex),
            EvalSplit::Test => (SplitTag::TestQuery, SplitTag::TestIndex),
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSplit::Val => write!(f, "val"),
            EvalSplit::Test => write!(f, "test"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Joint,
    Separate,
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexMode::Joint => write!(f, "joint"),
            IndexMode::Separate => write!(f, "separate"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DomainMetrics {
    pub domain_id: u16,
    pub queries: usize,
    /// Queries skipped because no index entry shares their class.
    pub excluded: usize,
    pub r1: f64,
    pub mp5: f64,
}

/// Run identity attached to every metrics artifact.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunMeta {
    pub run_id: String,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub split: EvalSplit,
    pub mode: IndexMode,
    pub per_domain: Vec<DomainMetrics>,
    /// Balanced (unweighted) means across domains with at least one query.
    pub mean_r1: f64,
    pub mean_mp5: f64,
    pub warnings: Vec<String>,
    pub meta: RunMeta,
}

impl MetricsReport {
    pub fn domain(&self, id: u16) -> Option<&DomainMetrics> {
        self.per_domain.iter().find(|d| d.domain_id == id)
    }
}

/// Embedding callback: maps dataset example indices to unit-norm vectors.
pub type EmbedFn<'a, S> = dyn FnMut(&[usize]) -> Result<Vec<Vec<S>>, EvalError> + 'a;

/// Evaluates every query of the split against a single cross-domain index.
pub fn joint_index_eval<S: Scalar>(
    embed: &mut EmbedFn<'_, S>,
    dataset: &Dataset,
    split: EvalSplit,
) -> Result<MetricsReport, EvalError> {
    evaluate_split(embed, dataset, split, IndexMode::Joint)
}

/// Evaluates each query against only its own domain's index entries.
pub fn separate_index_eval<S: Scalar>(
    embed: &mut EmbedFn<'_, S>,
    dataset: &Dataset,
    split: EvalSplit,
) -> Result<MetricsReport, EvalError> {
    evaluate_split(embed, dataset, split, IndexMode::Separate)
}

pub fn evaluate_split<S: Scalar>(
    embed: &mut EmbedFn<'_, S>,
    dataset: &Dataset,
    split: EvalSplit,
    mode: IndexMode,
) -> Result<MetricsReport, EvalError> {
    let (query_tag, index_tag) = split.tags();
    let index_ids: Vec<usize> = (0..dataset.examples.len())
        .filter(|&i| dataset.examples[i].split == index_tag)
        .collect();
    let query_ids: Vec<usize> = (0..dataset.examples.len())
        .filter(|&i| dataset.examples[i].split == query_tag)
        .collect();

    let index_vecs = embed(&index_ids)?;
    let query_vecs = embed(&query_ids)?;
    let dim = index_vecs.first().map(|v| v.len()).unwrap_or(0);

    // Build indices: one joint, or one per domain. Ids inside each index
    // follow dataset order, which fixes the tie rule.
    let n_domains = dataset.num_domains();
    let mut indices: Vec<EmbeddingIndex<S>> = match mode {
        IndexMode::Joint => vec![EmbeddingIndex::new(dim)],
        IndexMode::Separate => (0..n_domains).map(|_| EmbeddingIndex::new(dim)).collect(),
    };
    for (pos, &i) in index_ids.iter().enumerate() {
        let e = &dataset.examples[i];
        let slot = match mode {
            IndexMode::Joint => 0,
            IndexMode::Separate => e.domain_id as usize,
        };
        indices[slot].push(&index_vecs[pos], (e.domain_id, e.class_id))?;
    }
    let counts: Vec<BTreeMap<Label, usize>> = indices.iter().map(|ix| ix.positive_counts()).collect();

    let mut sums: Vec<(usize, usize, f64, f64)> = vec![(0, 0, 0.0, 0.0); n_domains]; // (queries, excluded, r1, mp5)
    for (pos, &i) in query_ids.iter().enumerate() {
        let e = &dataset.examples[i];
        let d = e.domain_id as usize;
        let slot = match mode {
            IndexMode::Joint => 0,
            IndexMode::Separate => d,
        };
        let index = &indices[slot];
        if index.is_empty() {
            sums[d].1 += 1;
            continue;
        }
        let label = (e.domain_id, e.class_id);
        let n_pos = counts[slot].get(&label).copied().unwrap_or(0);
        if n_pos == 0 {
            sums[d].1 += 1;
            continue;
        }
        let ranked = index.knn_search(&query_vecs[pos], 5.min(n_pos).max(1))?;
        sums[d].0 += 1;
        sums[d].2 += recall_at_1(index, &ranked, label);
        sums[d].3 += modified_mp_at_k(index, &ranked, label, n_pos, 5).unwrap_or(0.0);
    }

    let mut per_domain = Vec::new();
    let mut warnings = Vec::new();
    for (d, &(q, excluded, r1, mp5)) in sums.iter().enumerate() {
        if excluded > 0 {
            warnings.push(format!("domain {d}: {excluded} query(ies) had no same-class index entry and were excluded"));
        }
        if q == 0 {
            warnings.push(format!("domain {d}: no scorable queries; omitted from the mean"));
            continue;
        }
        per_domain.push(DomainMetrics {
            domain_id: d as u16,
            queries: q,
            excluded,
            r1: r1 / q as f64,
            mp5: mp5 / q as f64,
        });
    }
    let n = per_domain.len().max(1) as f64;
    let mean_r1 = per_domain.iter().map(|d| d.r1).sum::<f64>() / n;
    let mean_mp5 = per_domain.iter().map(|d| d.mp5).sum::<f64>() / n;

    Ok(MetricsReport {
        split,
        mode,
        per_domain,
        mean_r1,
        mean_mp5,
        warnings,
        meta: RunMeta::default(),
    })
}

/// CSV rows: run_id, seed, step, split, domain, metric, value. Metric values
/// are reported x100. The `mean` domain rows carry the balanced averages.
pub fn metrics_csv(reports: &[&MetricsReport]) -> String {
    let mut out = String::from("run_id,seed,step,split,domain,metric,value\n");
    for r in reports {
        let mut row = |domain: &str, metric: &str, value: f64| {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4}\n",
                r.meta.run_id, r.meta.seed, r.meta.step, r.split, domain, metric, value * 100.0
            ));
        };
        for d in &r.per_domain {
            row(&d.domain_id.to_string(), "R@1", d.r1);
            row(&d.domain_id.to_string(), "mP@5", d.mp5);
        }
        row("mean", "R@1", r.mean_r1);
        row("mean", "mP@5", r.mean_mp5);
    }
    out
}

/// JSON summary: per-domain P@5 / R@1 columns plus the balanced mean.
pub fn metrics_json(report: &MetricsReport) -> serde_json::Value {
    let mut domains = serde_json::Map::new();
    for d in &report.per_domain {
        domains.insert(
            d.domain_id.to_string(),
            serde_json::json!({
                "P@5": round4(d.mp5 * 100.0),
                "R@1": round4(d.r1 * 100.0),
                "queries": d.queries,
                "excluded": d.excluded,
            }),
        );
    }
    serde_json::json!({
        "run_id": report.meta.run_id,
        "seed": report.meta.seed,
        "step": report.meta.step,
        "config_hash": report.meta.config_hash,
        "split": report.split,
        "mode": report.mode,
        "domains": domains,
        "mean": { "P@5": round4(report.mean_mp5 * 100.0), "R@1": round4(report.mean_r1 * 100.0) },
        "warnings": report.warnings,
    })
}

fn round4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

pub fn write_metrics_files(dir: &Path, stem: &str, report: &MetricsReport) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), metrics_csv(&[report]))?;
    let json = serde_json::to_string_pretty(&metrics_json(report)).expect("metrics serialize");
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}
