//! Training orchestration: the joint online training loop (shared backbone,
//! student head, per-domain teacher heads, distillation into the student),
//! the two-phase offline distillation baselines, checkpoint/metrics output,
//! and evaluation entry points.
//!
//! One optimizer step consumes exactly one clean single-domain batch. The
//! teacher heads of all other domains are not bound to the step's tape, so
//! they cannot receive gradient or optimizer updates.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Tape, TensorError};
use crate::checkpoint::{save_checkpoint, CkptError};
use crate::config::{fnv1a64, ExperimentConfig, Mode, ModelVariant};
use crate::datagen::{generate_multidomain, read_dataset, DataError, Dataset};
use crate::eval::{
    evaluate_split, EvalError, EvalSplit, IndexMode, MetricsReport, RunMeta,
};
use crate::losses::{
    logit_distill, nsl_classification, relational_distill, total_loss, LossError, LossValues,
};
use crate::model::{
    embed_student, embed_teacher, init_params, BindSpec, ModelError, ModelGraph, ModelParams,
};
use crate::optim::Adam;
use crate::sampler::{make_batch, DomainSplits, LossSource, SamplerError, SamplerKind, SamplerState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CkptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Per-step log entry: chosen domain, every computed loss term, and the
/// sampler distribution in effect at that step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: u64,
    pub domain: usize,
    pub losses: LossValues,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RefreshRecord {
    pub step: u64,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub refreshes: Vec<RefreshRecord>,
    pub evals: Vec<MetricsReport>,
}

pub struct TrainOutcome {
    pub params: ModelParams<f64>,
    /// Frozen phase-1 teacher models (offline modes only).
    pub teachers: Vec<ModelParams<f64>>,
    pub log: RunLog,
    pub final_step: u64,
}

const INIT_TAG: &str = "init";
const SAMPLER_TAG: &str = "sampler";
const BATCH_TAG: &str = "batch";
const PHASE2_TAG: &str = "phase2";

fn substream(seed: u64, tag: &str) -> u64 {
    crate::datagen::splitmix64(seed ^ fnv1a64(tag.as_bytes()))
}

/// Loads the dataset file when `data` is configured, otherwise generates the
/// synthetic benchmark from the inline generator spec.
pub fn load_or_generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset, TrainError> {
    match &cfg.data_path {
        Some(p) => Ok(read_dataset(p)?),
        None => Ok(generate_multidomain(&cfg.generator)?),
    }
}

fn assemble_batch(dataset: &Dataset, ids: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut flat = Vec::with_capacity(ids.len() * dataset.feature_dim);
    let mut labels = Vec::with_capacity(ids.len());
    for &i in ids {
        let e = &dataset.examples[i];
        flat.extend(e.features.iter().map(|&f| f as f64));
        labels.push(e.class_id as usize);
    }
    (flat, labels)
}

/// Trains one model for one seed. Dispatches on the configured mode.
pub fn train(cfg: &ExperimentConfig, seed: u64, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    match cfg.mode {
        Mode::Udon | Mode::BaselineClsOnly => train_online(cfg, seed, dataset),
        Mode::OfflineDistill1 | Mode::OfflineDistill8 => train_offline_distill(cfg, seed, dataset),
    }
}

fn train_online(cfg: &ExperimentConfig, seed: u64, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    let splits = DomainSplits::new(dataset);
    let flags = cfg.loss_flags();
    let mut params = init_params::<f64>(cfg.model_config(dataset), substream(seed, INIT_TAG))?;
    let sizes: Vec<usize> = (0..params.num_tensors()).map(|s| params.tensor(s).len()).collect();
    let mut adam = Adam::new(cfg.adam_config(), &sizes);
    let mut sampler = SamplerState::new(
        &cfg.sampler_config(),
        dataset.num_domains(),
        &splits.train_sizes(),
        substream(seed, SAMPLER_TAG),
    )?;
    let mut batch_rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(substream(seed, BATCH_TAG));
    let mut log = RunLog::default();

    for step in 1..=cfg.steps {
        let domain = sampler.next_domain();
        let batch = make_batch(&splits, domain, cfg.batch_size, cfg.class_balanced, &mut batch_rng)?;
        let (flat, labels) = assemble_batch(dataset, &batch);

        let mut tape = Tape::new();
        let x = tape.input(batch.len(), dataset.feature_dim, flat);
        let use_teacher = flags.teacher_cls || flags.rel || flags.logit
            || sampler.loss_source == LossSource::TeacherCls;
        let graph = ModelGraph::bind(
            &mut tape,
            &params,
            BindSpec { domain: Some(domain), student: true, teacher: use_teacher, trainable: true },
        )?;

        let e_b = graph.backbone_forward(&mut tape, x)?;
        let e_u = graph.student_embed(&mut tape, e_b)?;
        let l_u = graph.student_logits(&mut tape, e_u)?;
        let cls_student = nsl_classification(&mut tape, l_u, &labels)?;

        let mut cls_teacher = None;
        let mut rel = None;
        let mut log_term = None;
        if use_teacher {
            let e_t = graph.teacher_embed(&mut tape, e_b)?;
            let l_t = graph.teacher_logits(&mut tape, e_t)?;
            cls_teacher = Some(nsl_classification(&mut tape, l_t, &labels)?);
            if flags.rel || flags.logit {
                // Distillation is backpropagated only through the student's
                // head: it sees the trunk output through a gradient barrier,
                // so the shared backbone is shaped by the classification
                // losses alone and the teachers never feel the distillation.
                let e_b_stop = tape.stop_gradient(e_b);
                let e_u_d = graph.student_embed(&mut tape, e_b_stop)?;
                if flags.rel {
                    let e_t_stop = tape.stop_gradient(e_t);
                    rel = Some(relational_distill(&mut tape, e_u_d, e_t_stop, cfg.rel_norm)?);
                }
                if flags.logit {
                    let l_u_d = graph.student_logits(&mut tape, e_u_d)?;
                    let l_t_stop = tape.stop_gradient(l_t);
                    log_term = Some(logit_distill(&mut tape, l_u_d, l_t_stop, cfg.temperature)?);
                }
            }
        }

        let bundle = total_loss(
            &mut tape,
            if flags.teacher_cls { cls_teacher } else { None },
            if flags.student_cls { Some(cls_student) } else { None },
            rel,
            log_term,
        )?;

        // All computed terms go into the log, enabled or not.
        let values = LossValues {
            cls_teacher: cls_teacher.map(|id| tape.scalar_value(id)),
            cls_student: Some(tape.scalar_value(cls_student)),
            rel: rel.map(|id| tape.scalar_value(id)),
            log_distill: log_term.map(|id| tape.scalar_value(id)),
            total: tape.scalar_value(bundle.total),
        };
        if !values.total.is_finite() {
            return Err(TrainError::Diverged { step });
        }

        let grads = tape.backward(bundle.total)?;
        for &(slot, tid) in graph.bound() {
            if let Some(g) = grads.get(tid) {
                adam.step(slot, params.tensor_mut(slot), g);
            }
        }

        let sampler_loss = match sampler.loss_source {
            LossSource::TeacherCls => values.cls_teacher,
            LossSource::StudentCls => values.cls_student,
        }
        .ok_or_else(|| TrainError::Invalid("sampler loss source not computed this step".into()))?;
        sampler.record_loss(domain, sampler_loss)?;
        if sampler.kind == SamplerKind::Dynamic && sampler.due_refresh() {
            let probs = sampler.refresh_probabilities().to_vec();
            log.refreshes.push(RefreshRecord { step, probs });
        }

        log.steps.push(StepRecord { step, domain, losses: values, probs: sampler.probabilities().to_vec() });

        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            let report = evaluate_params(cfg, &params, dataset, EvalSplit::Val, IndexMode::Joint, EvalHead::Student, seed, step)?;
            log.evals.push(report);
        }
    }

    let report = evaluate_params(cfg, &params, dataset, EvalSplit::Val, IndexMode::Joint, EvalHead::Student, seed, cfg.steps)?;
    log.evals.push(report);

    Ok(TrainOutcome { params, teachers: Vec::new(), log, final_step: cfg.steps })
}

/// Two-phase offline distillation. Phase 1 trains teacher(s) with
/// classification only: one shared-backbone multi-head model, or one
/// independent specialist per domain. Phase 2 freezes them and trains a
/// fresh student backbone and head with student classification plus
/// relational distillation against the frozen teacher embeddings.
pub fn train_offline_distill(cfg: &ExperimentConfig, seed: u64, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
    let n_domains = dataset.num_domains();
    let splits = DomainSplits::new(dataset);

    // ---- phase 1: teachers, classification only ----
    let mut teachers: Vec<ModelParams<f64>> = Vec::new();
    match cfg.mode {
        Mode::OfflineDistill1 => {
            let mcfg = cfg.variant_model_config(dataset, ModelVariant::TeacherOnly);
            let mut params = init_params::<f64>(mcfg, substream(seed, INIT_TAG))?;
            train_teacher_phase(cfg, seed, dataset, &splits, &mut params, None)?;
            teachers.push(params);
        }
        Mode::OfflineDistill8 => {
            for domain in 0..n_domains {
                let mcfg = cfg.variant_model_config(dataset, ModelVariant::Specialist(domain));
                let mut params =
                    init_params::<f64>(mcfg, substream(seed, &format!("{INIT_TAG}.{domain}")))?;
                train_teacher_phase(cfg, seed, dataset, &splits, &mut params, Some(domain))?;
                teachers.push(params);
            }
        }
        _ => return Err(TrainError::Invalid("offline training called with an online mode".into())),
    }

    // ---- phase 2: frozen teachers, fresh student ----
    let teacher_snapshot: Vec<ModelParams<f64>> = teachers.clone();
    let mut params = init_params::<f64>(
        cfg.variant_model_config(dataset, ModelVariant::Main),
        substream(seed, &format!("{INIT_TAG}.{PHASE2_TAG}")),
    )?;
    let sizes: Vec<usize> = (0..params.num_tensors()).map(|s| params.tensor(s).len()).collect();
    let mut adam = Adam::new(cfg.adam_config(), &sizes);
    let sampler_cfg = cfg.sampler_config();
    let mut sampler = SamplerState::new(
        &sampler_cfg,
        n_domains,
        &splits.train_sizes(),
        substream(seed, &format!("{SAMPLER_TAG}.{PHASE2_TAG}")),
    )?;
    let mut batch_rng: ChaCha8Rng =
        rand::SeedableRng::seed_from_u64(substream(seed, &format!("{BATCH_TAG}.{PHASE2_TAG}")));
    let mut log = RunLog::default();

    for step in 1..=cfg.steps {
        let domain = sampler.next_domain();
        let batch = make_batch(&splits, domain, cfg.batch_size, cfg.class_balanced, &mut batch_rng)?;
        let (flat, labels) = assemble_batch(dataset, &batch);

        // Frozen teacher embeddings for this batch, computed off-tape.
        let feats: Vec<Vec<f64>> = flat.chunks(dataset.feature_dim).map(|c| c.to_vec()).collect();
        let (t_params, t_domain) = match cfg.mode {
            Mode::OfflineDistill1 => (&teachers[0], domain),
            _ => (&teachers[domain], 0),
        };
        let e_t_rows = embed_teacher(t_params, &feats, t_domain)?;
        let mut e_t_flat = Vec::with_capacity(e_t_rows.len() * cfg.teacher_dim);
        for r in &e_t_rows {
            e_t_flat.extend_from_slice(r);
        }

        let mut tape = Tape::new();
        let x = tape.input(batch.len(), dataset.feature_dim, flat);
        let e_t = tape.input(batch.len(), cfg.teacher_dim, e_t_flat);
        let graph = ModelGraph::bind(
            &mut tape,
            &params,
            BindSpec { domain: Some(domain), student: true, teacher: false, trainable: true },
        )?;
        let e_b = graph.backbone_forward(&mut tape, x)?;
        let e_u = graph.student_embed(&mut tape, e_b)?;
        let l_u = graph.student_logits(&mut tape, e_u)?;
        let cls_student = nsl_classification(&mut tape, l_u, &labels)?;
        let rel = relational_distill(&mut tape, e_u, e_t, cfg.rel_norm)?;
        let bundle = total_loss(&mut tape, None, Some(cls_student), Some(rel), None)?;

        let values = LossValues {
            cls_teacher: None,
            cls_student: Some(tape.scalar_value(cls_student)),
            rel: Some(tape.scalar_value(rel)),
            log_distill: None,
            total: tape.scalar_value(bundle.total),
        };
        if !values.total.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let grads = tape.backward(bundle.total)?;
        for &(slot, tid) in graph.bound() {
            if let Some(g) = grads.get(tid) {
                adam.step(slot, params.tensor_mut(slot), g);
            }
        }
        sampler.record_loss(domain, values.cls_student.unwrap())?;
        if sampler.kind == SamplerKind::Dynamic && sampler.due_refresh() {
            let probs = sampler.refresh_probabilities().to_vec();
            log.refreshes.push(RefreshRecord { step, probs });
        }
        log.steps.push(StepRecord { step, domain, losses: values, probs: sampler.probabilities().to_vec() });
    }

    // Frozen contract: phase 2 must not have touched the teachers.
    for (a, b) in teachers.iter().zip(teacher_snapshot.iter()) {
        for slot in 0..a.num_tensors() {
            assert_eq!(a.tensor(slot).data, b.tensor(slot).data, "teacher parameters changed during phase 2");
        }
    }

    let report = evaluate_params(cfg, &params, dataset, EvalSplit::Val, IndexMode::Joint, EvalHead::Student, seed, cfg.steps)?;
    log.evals.push(report);

    Ok(TrainOutcome { params, teachers, log, final_step: cfg.steps })
}

/// Classification-only phase over teacher heads. `only_domain` restricts
/// batches to one global domain (specialists), mapping it to the model's
/// single local domain.
fn train_teacher_phase(
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    splits: &DomainSplits,
    params: &mut ModelParams<f64>,
    only_domain: Option<usize>,
) -> Result<(), TrainError> {
    let sizes: Vec<usize> = (0..params.num_tensors()).map(|s| params.tensor(s).len()).collect();
    let mut adam = Adam::new(cfg.adam_config(), &sizes);
    let tag_suffix = only_domain.map(|d| format!(".p1.{d}")).unwrap_or_else(|| ".p1".to_string());
    let mut sampler = match only_domain {
        Some(_) => None,
        None => Some(SamplerState::new(
            &crate::sampler::SamplerConfig { loss_source: LossSource::TeacherCls, ..cfg.sampler_config() },
            dataset.num_domains(),
            &splits.train_sizes(),
            substream(seed, &format!("{SAMPLER_TAG}{tag_suffix}")),
        )?),
    };
    let mut batch_rng: ChaCha8Rng =
        rand::SeedableRng::seed_from_u64(substream(seed, &format!("{BATCH_TAG}{tag_suffix}")));

    for step in 1..=cfg.phase1_steps {
        let global_domain = match (&mut sampler, only_domain) {
            (_, Some(d)) => d,
            (Some(s), None) => s.next_domain(),
            (None, None) => unreachable!(),
        };
        let local_domain = if only_domain.is_some() { 0 } else { global_domain };
        let batch = make_batch(splits, global_domain, cfg.batch_size, cfg.class_balanced, &mut batch_rng)?;
        let (flat, labels) = assemble_batch(dataset, &batch);

        let mut tape = Tape::new();
        let x = tape.input(batch.len(), dataset.feature_dim, flat);
        let graph = ModelGraph::bind(
            &mut tape,
            params,
            BindSpec { domain: Some(local_domain), student: false, teacher: true, trainable: true },
        )?;
        let e_b = graph.backbone_forward(&mut tape, x)?;
        let e_t = graph.teacher_embed(&mut tape, e_b)?;
        let l_t = graph.teacher_logits(&mut tape, e_t)?;
        let cls = nsl_classification(&mut tape, l_t, &labels)?;
        let value = tape.scalar_value(cls);
        if !value.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        let grads = tape.backward(cls)?;
        for &(slot, tid) in graph.bound() {
            if let Some(g) = grads.get(tid) {
                adam.step(slot, params.tensor_mut(slot), g);
            }
        }
        if let Some(s) = &mut sampler {
            s.record_loss(global_domain, value)?;
            if s.kind == SamplerKind::Dynamic && s.due_refresh() {
                s.refresh_probabilities();
            }
        }
    }
    Ok(())
}

/// Which head supplies the evaluated embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalHead {
    Student,
    Teacher,
}

/// Embeds selected examples with the requested head. Teacher embeddings use
/// each example's own domain head.
pub fn embed_examples(
    params: &ModelParams<f64>,
    dataset: &Dataset,
    ids: &[usize],
    head: EvalHead,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let to_f64 = |i: usize| -> Vec<f64> { dataset.examples[i].features.iter().map(|&f| f as f64).collect() };
    match head {
        EvalHead::Student => {
            let feats: Vec<Vec<f64>> = ids.iter().map(|&i| to_f64(i)).collect();
            embed_student(params, &feats)
        }
        EvalHead::Teacher => {
            let mut out: Vec<Option<Vec<f64>>> = vec![None; ids.len()];
            for domain in 0..params.config.num_domains {
                let positions: Vec<usize> = (0..ids.len())
                    .filter(|&p| dataset.examples[ids[p]].domain_id as usize == domain)
                    .collect();
                if positions.is_empty() {
                    continue;
                }
                let feats: Vec<Vec<f64>> = positions.iter().map(|&p| to_f64(ids[p])).collect();
                let embs = embed_teacher(params, &feats, domain)?;
                for (p, e) in positions.into_iter().zip(embs) {
                    out[p] = Some(e);
                }
            }
            Ok(out.into_iter().map(|o| o.expect("domain id out of model range")).collect())
        }
    }
}

/// Full retrieval evaluation of one parameter set on one split.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_params(
    cfg: &ExperimentConfig,
    params: &ModelParams<f64>,
    dataset: &Dataset,
    split: EvalSplit,
    mode: IndexMode,
    head: EvalHead,
    seed: u64,
    step: u64,
) -> Result<MetricsReport, TrainError> {
    let mut embed = |ids: &[usize]| {
        embed_examples(params, dataset, ids, head).map_err(|e| EvalError::Embed(e.to_string()))
    };
    let mut report = evaluate_split(&mut embed, dataset, split, mode)?;
    let hash = cfg.config_hash();
    report.meta = RunMeta { run_id: format!("{hash}-s{seed}"), seed, step, config_hash: hash };
    Ok(report)
}

// ---- run outputs ----

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn train_log_csv(log: &RunLog) -> String {
    let mut out = String::from("step,domain,cls_teacher,cls_student,rel,log_distill,total\n");
    for s in &log.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            s.step,
            s.domain,
            csv_opt(s.losses.cls_teacher),
            csv_opt(s.losses.cls_student),
            csv_opt(s.losses.rel),
            csv_opt(s.losses.log_distill),
            s.losses.total,
        ));
    }
    out
}

pub fn sampler_trace_csv(log: &RunLog, n_domains: usize) -> String {
    let mut out = String::from("step,domain");
    for d in 0..n_domains {
        out.push_str(&format!(",p{d}"));
    }
    out.push('\n');
    for s in &log.steps {
        out.push_str(&format!("{},{}", s.step, s.domain));
        for p in &s.probs {
            out.push_str(&format!(",{p:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Writes every artifact of one training run into `out_dir`.
pub fn write_run_outputs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    outcome: &TrainOutcome,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config_resolved.cfg"), format!("{}run_seed = {seed}\n", cfg.echo()))?;

    save_checkpoint(
        &out_dir.join("checkpoint.ckpt"),
        &outcome.params,
        &cfg.echo(),
        seed,
        outcome.final_step,
    )?;
    match cfg.mode {
        Mode::OfflineDistill1 => {
            let echo = format!("{}model_variant = teacher_only\n", cfg.echo());
            save_checkpoint(&out_dir.join("teacher_phase1.ckpt"), &outcome.teachers[0], &echo, seed, cfg.phase1_steps)?;
        }
        Mode::OfflineDistill8 => {
            for (d, t) in outcome.teachers.iter().enumerate() {
                let echo = format!("{}model_variant = specialist_{d}\n", cfg.echo());
                save_checkpoint(&out_dir.join(format!("specialist_{d}.ckpt")), t, &echo, seed, cfg.phase1_steps)?;
            }
        }
        _ => {}
    }

    std::fs::write(out_dir.join("train_log.csv"), train_log_csv(&outcome.log))?;
    std::fs::write(out_dir.join("sampler_trace.csv"), sampler_trace_csv(&outcome.log, dataset.num_domains()))?;

    let reports: Vec<&MetricsReport> = outcome.log.evals.iter().collect();
    std::fs::write(out_dir.join("metrics_val.csv"), crate::eval::metrics_csv(&reports))?;
    if let Some(last) = outcome.log.evals.last() {
        let json = serde_json::to_string_pretty(&crate::eval::metrics_json(last)).expect("metrics serialize");
        std::fs::write(out_dir.join("metrics_val.json"), json)?;
    }
    Ok(())
}
