//! Command-line front end: synthetic data generation, training, retrieval
//! evaluation, and ablation grids.
//!
//! Exit codes: 0 on success, 2 on contract errors (bad config, bad files,
//! precondition violations), 3 when training diverges.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use udon::ablate::{run_grid, GridSpec};
use udon::checkpoint::load_checkpoint;
use udon::config::{load_config, ExperimentConfig, KvMap};
use udon::datagen::{generate_multidomain, read_dataset, write_dataset, write_metadata};
use udon::eval::{write_metrics_files, EvalSplit, IndexMode};
use udon::trainer::{
    evaluate_params, load_or_generate_dataset, train, write_run_outputs, EvalHead, TrainError,
};

#[derive(Parser)]
#[command(name = "udon", version, about = "Universal-embedding trainer with multi-teacher online distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Separate,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Student,
    Teacher,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain dataset file (plus a .meta sidecar).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra key=value overrides (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train one model for one seed and write run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "joint")]
        mode: ModeArg,
        /// Which head produces the embeddings.
        #[arg(long, value_enum, default_value = "student")]
        head: HeadArg,
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a grid of named config cells over all seeds.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<TrainError>().map(|e| matches!(e, TrainError::Diverged { .. })).unwrap_or(false) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenData { config, out, sets } => {
            let cfg = load_config(&config, &sets)?;
            let dataset = generate_multidomain(&cfg.generator)?;
            write_dataset(&out, &dataset)?;
            let meta = out.with_extension(match out.extension() {
                Some(e) => format!("{}.meta", e.to_string_lossy()),
                None => "meta".to_string(),
            });
            write_metadata(&meta, &cfg.generator)?;
            println!(
                "wrote {} examples across {} domains to {}",
                dataset.examples.len(),
                dataset.num_domains(),
                out.display()
            );
            Ok(())
        }
        Cmd::Train { config, seed, out_dir, sets } => {
            let cfg = load_config(&config, &sets)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let dataset = load_or_generate_dataset(&cfg)?;
            let outcome = train(&cfg, seed, &dataset).map_err(keep_train_error)?;
            write_run_outputs(&out_dir, &cfg, seed, &dataset, &outcome)?;
            if let Some(last) = outcome.log.evals.last() {
                println!(
                    "seed {seed}: {} steps, val R@1 {:.2}, val mP@5 {:.2} -> {}",
                    outcome.final_step,
                    last.mean_r1 * 100.0,
                    last.mean_mp5 * 100.0,
                    out_dir.display()
                );
            }
            Ok(())
        }
        Cmd::Eval { checkpoint, data, split, mode, head, out_dir } => {
            let dataset = read_dataset(&data)?;
            let ckpt = load_checkpoint::<f64>(&checkpoint, &dataset)?;
            let cfg = ExperimentConfig::from_kv(&KvMap::parse_text(&ckpt.config_echo)?)?;
            let split = match split {
                SplitArg::Val => EvalSplit::Val,
                SplitArg::Test => EvalSplit::Test,
            };
            let mode = match mode {
                ModeArg::Joint => IndexMode::Joint,
                ModeArg::Separate => IndexMode::Separate,
            };
            let head = match head {
                HeadArg::Student => EvalHead::Student,
                HeadArg::Teacher => EvalHead::Teacher,
            };
            let report = evaluate_params(&cfg, &ckpt.params, &dataset, split, mode, head, ckpt.seed, ckpt.step)?;
            let stem = format!("metrics_{split}_{mode}");
            write_metrics_files(&out_dir, &stem, &report)?;
            for d in &report.per_domain {
                println!("domain {}: R@1 {:.2}  mP@5 {:.2}  ({} queries)", d.domain_id, d.r1 * 100.0, d.mp5 * 100.0, d.queries);
            }
            println!("mean: R@1 {:.2}  mP@5 {:.2}", report.mean_r1 * 100.0, report.mean_mp5 * 100.0);
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Cmd::Ablate { grid, out_dir } => {
            let spec = GridSpec::from_file(&grid)?;
            let outcome = run_grid(&spec, |cell, seed| println!("running cell {cell} seed {seed}"))
                .map_err(keep_train_error)?;
            std::fs::create_dir_all(&out_dir).context("creating output directory")?;
            let csv_path = out_dir.join("ablation.csv");
            std::fs::write(&csv_path, outcome.consolidated_csv())?;
            println!(
                "{} runs completed, {} failed -> {}",
                outcome.runs.len(),
                outcome.failures.len(),
                csv_path.display()
            );
            for (cell, seed, err) in &outcome.failures {
                eprintln!("cell {cell} seed {seed} failed: {err}");
            }
            Ok(())
        }
    }
}

fn keep_train_error(e: TrainError) -> anyhow::Error {
    anyhow::Error::new(e)
}
