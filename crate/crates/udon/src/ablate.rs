//! Ablation grids: named configuration cells run over all seeds, with a
//! consolidated per-(cell, seed, domain, metric) CSV plus seed-mean rows.
//!
//! The built-in cell names toggle one training axis each: sampler policy,
//! teacher dimensionality, distillation terms, the student's classification
//! loss, the sampler's loss source, and a classification-only baseline with
//! the dynamic sampler. Custom cells are defined in the grid file with
//! `cell_<name> = key=value;key=value` overrides of the base config.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{ConfigError, ExperimentConfig, KvMap};
use crate::datagen::Dataset;
use crate::eval::{EvalSplit, IndexMode, MetricsReport};
use crate::trainer::{evaluate_params, load_or_generate_dataset, train, EvalHead, TrainError};

/// Built-in cells and the config deltas they apply.
pub const KNOWN_CELLS: [(&str, &[&str]); 8] = [
    ("full", &[]),
    ("no_dyn_sampler_rr", &["sampler=round_robin"]),
    ("teachers_64d", &["teacher_dim=64"]),
    ("no_logit_distill", &["no_logit_distill=true"]),
    ("no_any_distill", &["no_any_distill=true"]),
    ("no_student_ce", &["no_student_ce=true"]),
    ("dyn_sampler_on_univ", &["loss_source=student_cls"]),
    ("cls_only_dyn", &["mode=baseline_cls_only", "sampler=dynamic"]),
];

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub base: KvMap,
    pub seeds: Vec<u64>,
    /// (cell name, config overrides applied on top of the base).
    pub cells: Vec<(String, Vec<String>)>,
    pub split: EvalSplit,
}

impl GridSpec {
    /// Grid file keys: `base_config` (path, optional), `cells`
    /// (comma-separated names), `seeds` (optional override), `split`
    /// (val|test, default test), and `cell_<name>` custom override lines.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let kv = KvMap::from_file(path)?;
        let base = match kv.get("base_config") {
            Some(p) => {
                let base_path = if Path::new(p).is_absolute() {
                    Path::new(p).to_path_buf()
                } else {
                    path.parent().unwrap_or(Path::new(".")).join(p)
                };
                KvMap::from_file(&base_path)?
            }
            None => KvMap::new(),
        };
        let base_cfg = ExperimentConfig::from_kv(&base)?;
        let seeds = match kv.get("seeds") {
            None => base_cfg.seeds.clone(),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| ConfigError::BadValue { key: "seeds".into(), what: format!("`{v}` is not a seed list") })?,
        };
        let split = match kv.get("split").unwrap_or("test") {
            "val" => EvalSplit::Val,
            "test" => EvalSplit::Test,
            other => {
                return Err(ConfigError::BadValue { key: "split".into(), what: format!("`{other}` is not val|test") })
            }
        };
        let names: Vec<String> = kv
            .get("cells")
            .unwrap_or("full")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let mut cells = Vec::new();
        for name in names {
            let overrides = match kv.get(&format!("cell_{name}")) {
                Some(v) => v.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => cell_overrides(&name)
                    .ok_or_else(|| ConfigError::BadValue {
                        key: "cells".into(),
                        what: format!("unknown cell `{name}` and no cell_{name} override line"),
                    })?
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            };
            cells.push((name, overrides));
        }
        Ok(GridSpec { base, seeds, cells, split })
    }
}

/// Overrides for a built-in cell name.
pub fn cell_overrides(name: &str) -> Option<&'static [&'static str]> {
    KNOWN_CELLS.iter().find(|(n, _)| *n == name).map(|&(_, o)| o)
}

/// Applies a cell's overrides to the base map and parses the result.
pub fn cell_config(base: &KvMap, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut kv = base.clone();
    kv.apply_sets(&overrides.iter().cloned().collect::<Vec<_>>())?;
    ExperimentConfig::from_kv(&kv)
}

#[derive(Clone, Debug)]
pub struct CellRun {
    pub cell: String,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Default)]
pub struct GridOutcome {
    pub runs: Vec<CellRun>,
    /// (cell, seed, error message) for failed cells; the grid keeps going.
    pub failures: Vec<(String, u64, String)>,
}

impl GridOutcome {
    /// Mean metric per cell across seeds: (cell, domain, metric) -> mean.
    pub fn seed_means(&self) -> BTreeMap<(String, String, String), f64> {
        let mut acc: BTreeMap<(String, String, String), (f64, usize)> = BTreeMap::new();
        for run in &self.runs {
            let mut add = |domain: String, metric: &str, v: f64| {
                let e = acc.entry((run.cell.clone(), domain, metric.to_string())).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            };
            for d in &run.report.per_domain {
                add(d.domain_id.to_string(), "R@1", d.r1);
                add(d.domain_id.to_string(), "mP@5", d.mp5);
            }
            add("mean".into(), "R@1", run.report.mean_r1);
            add("mean".into(), "mP@5", run.report.mean_mp5);
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    /// Consolidated CSV: one row per (cell, seed, domain, metric), plus
    /// seed-mean rows with `mean` in the seed column.
    pub fn consolidated_csv(&self) -> String {
        let mut out = String::from("cell,seed,domain,metric,value\n");
        for run in &self.runs {
            let mut row = |domain: &str, metric: &str, v: f64| {
                out.push_str(&format!("{},{},{},{},{:.4}\n", run.cell, run.seed, domain, metric, v * 100.0));
            };
            for d in &run.report.per_domain {
                row(&d.domain_id.to_string(), "R@1", d.r1);
                row(&d.domain_id.to_string(), "mP@5", d.mp5);
            }
            row("mean", "R@1", run.report.mean_r1);
            row("mean", "mP@5", run.report.mean_mp5);
        }
        for ((cell, domain, metric), v) in self.seed_means() {
            out.push_str(&format!("{cell},mean,{domain},{metric},{:.4}\n", v * 100.0));
        }
        for (cell, seed, err) in &self.failures {
            out.push_str(&format!("{cell},{seed},,error,\"{}\"\n", err.replace('"', "'")));
        }
        out
    }
}

/// Runs every (cell, seed) and evaluates on the grid's split with the joint
/// index. Cell failures are recorded, not fatal.
pub fn run_grid(grid: &GridSpec, mut on_run: impl FnMut(&str, u64)) -> Result<GridOutcome, TrainError> {
    let mut outcome = GridOutcome::default();
    let mut datasets: BTreeMap<String, Dataset> = BTreeMap::new();
    for (cell, overrides) in &grid.cells {
        let cfg = match cell_config(&grid.base, overrides) {
            Ok(c) => c,
            Err(e) => {
                for &seed in &grid.seeds {
                    outcome.failures.push((cell.clone(), seed, e.to_string()));
                }
                continue;
            }
        };
        // Cells share datasets whenever their generator/data settings agree.
        let data_key = format!("{:?}-{:?}", cfg.data_path, cfg.generator);
        if !datasets.contains_key(&data_key) {
            datasets.insert(data_key.clone(), load_or_generate_dataset(&cfg)?);
        }
        let dataset = &datasets[&data_key];
        for &seed in &grid.seeds {
            on_run(cell, seed);
            let result = train(&cfg, seed, dataset).and_then(|out| {
                evaluate_params(&cfg, &out.params, dataset, grid.split, IndexMode::Joint, EvalHead::Student, seed, out.final_step)
            });
            match result {
                Ok(report) => outcome.runs.push(CellRun { cell: cell.clone(), seed, report }),
                Err(e) => outcome.failures.push((cell.clone(), seed, e.to_string())),
            }
        }
    }
    Ok(outcome)
}
