//! Loss terms: per-head classification, relational distillation over batch
//! Gram matrices, logit distillation, and their unweighted combination.
//!
//! Both distillation terms require the teacher-side argument to be a
//! stop-gradient copy; this is asserted so no gradient can ever reach a
//! teacher head through a distillation loss.

use thiserror::Error;

use crate::autograd::{Tape, TensorError, TensorId};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label count {labels} does not match batch size {batch}")]
    LabelCountMismatch { labels: usize, batch: usize },
    #[error("batch size mismatch: {lhs} vs {rhs}")]
    BatchMismatch { lhs: usize, rhs: usize },
    #[error("teacher-side tensor must be a stop-gradient copy")]
    NotStopped,
    #[error("rows of {which} are not unit-norm (worst deviation {dev:e})")]
    NotUnitNorm { which: &'static str, dev: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("no loss terms enabled")]
    AllTermsDisabled,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the relational term is reduced over the BxB Gram difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelNorm {
    /// Raw sum of squared entries.
    Raw,
    /// Sum divided by B^2.
    Mean,
}

/// Which loss terms participate in the total.
#[derive(Clone, Copy, Debug)]
pub struct LossFlags {
    pub teacher_cls: bool,
    pub student_cls: bool,
    pub rel: bool,
    pub logit: bool,
}

impl LossFlags {
    pub fn all() -> Self {
        LossFlags { teacher_cls: true, student_cls: true, rel: true, logit: true }
    }

    pub fn any(&self) -> bool {
        self.teacher_cls || self.student_cls || self.rel || self.logit
    }
}

/// Scalar tape handles of the computed terms plus their fixed-order sum.
#[derive(Clone, Copy, Debug)]
pub struct LossBundle {
    pub cls_teacher: Option<TensorId>,
    pub cls_student: Option<TensorId>,
    pub rel: Option<TensorId>,
    pub log_distill: Option<TensorId>,
    pub total: TensorId,
}

/// Plain values of a bundle, for logging and the sampler.
#[derive(Clone, Copy, Debug)]
pub struct LossValues {
    pub cls_teacher: Option<f64>,
    pub cls_student: Option<f64>,
    pub rel: Option<f64>,
    pub log_distill: Option<f64>,
    pub total: f64,
}

impl LossBundle {
    pub fn values<S: Scalar>(&self, tape: &Tape<S>) -> LossValues {
        let v = |id: Option<TensorId>| id.map(|i| tape.scalar_value(i).to_f64_c());
        LossValues {
            cls_teacher: v(self.cls_teacher),
            cls_student: v(self.cls_student),
            rel: v(self.rel),
            log_distill: v(self.log_distill),
            total: tape.scalar_value(self.total).to_f64_c(),
        }
    }
}

/// Normalized-softmax classification loss: mean over the batch of the
/// negative log-softmax probability at the true class.
pub fn nsl_classification<S: Scalar>(
    tape: &mut Tape<S>,
    logits: TensorId,
    labels: &[usize],
) -> Result<TensorId, LossError> {
    let (b, c) = tape.shape(logits);
    if labels.len() != b {
        return Err(LossError::LabelCountMismatch { labels: labels.len(), batch: b });
    }
    let mut one_hot = vec![S::zero(); b * c];
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(LossError::LabelOutOfRange { label, classes: c });
        }
        one_hot[i * c + label] = S::one();
    }
    let lp = tape.log_softmax_rows(logits);
    let mask = tape.input(b, c, one_hot);
    let picked = tape.mul(lp, mask)?;
    let sum = tape.sum_all(picked);
    Ok(tape.scale(sum, -S::one() / S::from_f64_c(b as f64)))
}

fn check_unit_rows<S: Scalar>(tape: &Tape<S>, id: TensorId, which: &'static str) -> Result<(), LossError> {
    let (r, c) = tape.shape(id);
    let mut worst = 0.0f64;
    for i in 0..r {
        let row = &tape.values(id)[i * c..(i + 1) * c];
        let norm = row.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
        worst = worst.max((norm - 1.0).abs());
    }
    if worst > 1e-6 {
        return Err(LossError::NotUnitNorm { which, dev: worst });
    }
    Ok(())
}

/// Squared Frobenius distance between the student's and teacher's batch Gram
/// matrices. The teacher embeddings must be a stop-gradient copy, so gradient
/// flows only into the student side.
pub fn relational_distill<S: Scalar>(
    tape: &mut Tape<S>,
    e_u: TensorId,
    e_t_stopped: TensorId,
    norm: RelNorm,
) -> Result<TensorId, LossError> {
    let (bu, _) = tape.shape(e_u);
    let (bt, _) = tape.shape(e_t_stopped);
    if bu != bt {
        return Err(LossError::BatchMismatch { lhs: bu, rhs: bt });
    }
    if !tape.is_leaf(e_t_stopped) {
        return Err(LossError::NotStopped);
    }
    check_unit_rows(tape, e_u, "student embeddings")?;
    check_unit_rows(tape, e_t_stopped, "teacher embeddings")?;

    let ut = tape.transpose(e_u);
    let gram_u = tape.matmul(e_u, ut)?;
    let tt = tape.transpose(e_t_stopped);
    let gram_t = tape.matmul(e_t_stopped, tt)?;
    let diff = tape.frobenius_sq_diff(gram_u, gram_t)?;
    Ok(match norm {
        RelNorm::Raw => diff,
        RelNorm::Mean => tape.scale(diff, S::one() / S::from_f64_c((bu * bu) as f64)),
    })
}

/// Mean over the batch of KL(student || teacher) between the
/// temperature-softened class distributions, computed in log space. The
/// teacher logits must be a stop-gradient copy.
pub fn logit_distill<S: Scalar>(
    tape: &mut Tape<S>,
    l_u: TensorId,
    l_t_stopped: TensorId,
    temperature: f64,
) -> Result<TensorId, LossError> {
    if temperature <= 0.0 {
        return Err(LossError::NonPositiveTemperature(temperature));
    }
    let (bu, cu) = tape.shape(l_u);
    let (bt, ct) = tape.shape(l_t_stopped);
    if (bu, cu) != (bt, ct) {
        return Err(LossError::BatchMismatch { lhs: bu, rhs: bt });
    }
    if !tape.is_leaf(l_t_stopped) {
        return Err(LossError::NotStopped);
    }
    let inv_t = S::one() / S::from_f64_c(temperature);
    let su = tape.scale(l_u, inv_t);
    let st = tape.scale(l_t_stopped, inv_t);
    let p_log = tape.log_softmax_rows(su);
    let q_log = tape.log_softmax_rows(st);
    Ok(tape.kl_rows(p_log, q_log)?)
}

/// Unweighted sum of the enabled terms, in the fixed order
/// teacher classification, student classification, relational, logit.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    cls_teacher: Option<TensorId>,
    cls_student: Option<TensorId>,
    rel: Option<TensorId>,
    log_distill: Option<TensorId>,
) -> Result<LossBundle, LossError> {
    let mut total: Option<TensorId> = None;
    for term in [cls_teacher, cls_student, rel, log_distill].into_iter().flatten() {
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let total = total.ok_or(LossError::AllTermsDisabled)?;
    Ok(LossBundle { cls_teacher, cls_student, rel, log_distill, total })
}
