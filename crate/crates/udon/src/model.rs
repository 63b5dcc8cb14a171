//! Shared-backbone encoder with one universal student head and per-domain
//! teacher heads.
//!
//! The backbone is a GELU MLP whose output is row-normalized. Each head is a
//! projection (linear, or a one-hidden-layer MLP with layernorm and GELU)
//! followed by row normalization, plus a cosine classifier per domain whose
//! weight rows are normalized at use time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{Tape, TensorError, TensorId};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("domain index {index} out of range for {domains} domains")]
    DomainOutOfRange { index: usize, domains: usize },
    #[error("model has no {0} head")]
    MissingHead(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorKind {
    Linear,
    MlpOneHidden,
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub backbone_hidden_dims: Vec<usize>,
    /// Backbone output dimension D; head projections consume it.
    pub backbone_out_dim: usize,
    /// Universal student embedding dimension d.
    pub student_dim: usize,
    /// Teacher embedding dimension D_t.
    pub teacher_dim: usize,
    pub num_domains: usize,
    pub classes_per_domain: Vec<u32>,
    pub projector_kind: ProjectorKind,
    /// Temperature of the cosine classifiers.
    pub classifier_temperature: f64,
    /// Insert per-domain MLP projectors (hidden sizes 256/256/512) between
    /// the universal embedding and its classifiers.
    pub mlp_baseline: bool,
    /// Build the universal student head.
    pub include_student_head: bool,
    /// Build the per-domain teacher heads.
    pub include_teacher_heads: bool,
}

pub const BASELINE_PROJECTOR_DIMS: [usize; 3] = [256, 256, 512];

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.backbone_out_dim == 0 {
            return Err(ModelError::InvalidConfig("zero input or backbone dimension".into()));
        }
        if self.num_domains == 0 || self.classes_per_domain.len() != self.num_domains {
            return Err(ModelError::InvalidConfig(format!(
                "classes_per_domain has {} entries for {} domains",
                self.classes_per_domain.len(),
                self.num_domains
            )));
        }
        if self.classes_per_domain.iter().any(|&c| c < 2) {
            return Err(ModelError::InvalidConfig("every domain needs at least 2 classes".into()));
        }
        if self.include_student_head && self.student_dim > self.backbone_out_dim {
            return Err(ModelError::InvalidConfig(format!(
                "student_dim {} exceeds backbone_out_dim {}",
                self.student_dim, self.backbone_out_dim
            )));
        }
        if self.include_teacher_heads && self.teacher_dim > self.backbone_out_dim {
            return Err(ModelError::InvalidConfig(format!(
                "teacher_dim {} exceeds backbone_out_dim {}",
                self.teacher_dim, self.backbone_out_dim
            )));
        }
        if self.classifier_temperature <= 0.0 {
            return Err(ModelError::InvalidConfig("classifier_temperature must be positive".into()));
        }
        if !self.include_student_head && !self.include_teacher_heads {
            return Err(ModelError::InvalidConfig("model needs at least one head".into()));
        }
        Ok(())
    }

    /// Layer dimensions of the backbone, input to output.
    pub fn backbone_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.backbone_hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.backbone_out_dim));
        dims
    }

    /// Closed-form trainable parameter count for this config.
    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize| i * o + o;
        let proj = |i: usize, o: usize| match self.projector_kind {
            ProjectorKind::Linear => linear(i, o),
            ProjectorKind::MlpOneHidden => linear(i, o) + linear(o, o),
        };
        let mut n = 0;
        for (i, o) in self.backbone_dims() {
            n += linear(i, o);
        }
        let d = self.backbone_out_dim;
        if self.include_student_head {
            n += proj(d, self.student_dim);
            let cls_in = if self.mlp_baseline { BASELINE_PROJECTOR_DIMS[2] } else { self.student_dim };
            for &c in &self.classes_per_domain {
                n += c as usize * cls_in;
            }
            if self.mlp_baseline {
                let mut prev = self.student_dim;
                for &h in &BASELINE_PROJECTOR_DIMS {
                    n += self.num_domains * linear(prev, h);
                    prev = h;
                }
            }
        }
        if self.include_teacher_heads {
            for &c in &self.classes_per_domain {
                n += proj(d, self.teacher_dim) + c as usize * self.teacher_dim;
            }
        }
        n
    }
}

/// Dense row-major value matrix held outside any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Slot indices of one projection inside the flat parameter list.
#[derive(Clone, Debug)]
enum ProjSlots {
    Linear { w: usize, b: usize },
    MlpOneHidden { w1: usize, b1: usize, w2: usize, b2: usize },
}

#[derive(Clone, Debug, Default)]
struct SlotMap {
    backbone: Vec<(usize, usize)>,
    student_proj: Option<ProjSlots>,
    teacher_projs: Vec<ProjSlots>,
    student_cls: Vec<usize>,
    teacher_cls: Vec<usize>,
    baseline_proj: Vec<Vec<(usize, usize)>>,
}

/// All trainable tensors of one model, in a stable named order.
#[derive(Clone, Debug)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    tensors: Vec<Matrix<S>>,
    names: Vec<String>,
    slots: SlotMap,
}

impl<S: Scalar> ModelParams<S> {
    /// Builds zero-valued parameters with the canonical slot layout.
    pub fn zeroed(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        let mut slots = SlotMap::default();

        let push = |tensors: &mut Vec<Matrix<S>>, names: &mut Vec<String>, name: String, r: usize, c: usize| {
            tensors.push(Matrix::zeros(r, c));
            names.push(name);
            tensors.len() - 1
        };

        for (l, (i, o)) in config.backbone_dims().into_iter().enumerate() {
            let w = push(&mut tensors, &mut names, format!("backbone.{l}.weight"), i, o);
            let b = push(&mut tensors, &mut names, format!("backbone.{l}.bias"), 1, o);
            slots.backbone.push((w, b));
        }

        let d = config.backbone_out_dim;
        let proj = |tensors: &mut Vec<Matrix<S>>, names: &mut Vec<String>, prefix: String, out: usize| match config
            .projector_kind
        {
            ProjectorKind::Linear => {
                let w = push(tensors, names, format!("{prefix}.weight"), d, out);
                let b = push(tensors, names, format!("{prefix}.bias"), 1, out);
                ProjSlots::Linear { w, b }
            }
            ProjectorKind::MlpOneHidden => {
                let w1 = push(tensors, names, format!("{prefix}.hidden.weight"), d, out);
                let b1 = push(tensors, names, format!("{prefix}.hidden.bias"), 1, out);
                let w2 = push(tensors, names, format!("{prefix}.out.weight"), out, out);
                let b2 = push(tensors, names, format!("{prefix}.out.bias"), 1, out);
                ProjSlots::MlpOneHidden { w1, b1, w2, b2 }
            }
        };

        if config.include_student_head {
            slots.student_proj = Some(proj(&mut tensors, &mut names, "student_proj".into(), config.student_dim));
        }
        if config.include_teacher_heads {
            for i in 0..config.num_domains {
                let p = proj(&mut tensors, &mut names, format!("teacher_proj.{i}"), config.teacher_dim);
                slots.teacher_projs.push(p);
            }
        }
        if config.include_student_head {
            if config.mlp_baseline {
                for i in 0..config.num_domains {
                    let mut layers = Vec::new();
                    let mut prev = config.student_dim;
                    for (l, &h) in BASELINE_PROJECTOR_DIMS.iter().enumerate() {
                        let w = push(&mut tensors, &mut names, format!("baseline_proj.{i}.{l}.weight"), prev, h);
                        let b = push(&mut tensors, &mut names, format!("baseline_proj.{i}.{l}.bias"), 1, h);
                        layers.push((w, b));
                        prev = h;
                    }
                    slots.baseline_proj.push(layers);
                }
            }
            let cls_in = if config.mlp_baseline { BASELINE_PROJECTOR_DIMS[2] } else { config.student_dim };
            for (i, &c) in config.classes_per_domain.iter().enumerate() {
                let s = push(&mut tensors, &mut names, format!("student_cls.{i}"), c as usize, cls_in);
                slots.student_cls.push(s);
            }
        }
        if config.include_teacher_heads {
            for (i, &c) in config.classes_per_domain.iter().enumerate() {
                let s = push(&mut tensors, &mut names, format!("teacher_cls.{i}"), c as usize, config.teacher_dim);
                slots.teacher_cls.push(s);
            }
        }

        Ok(ModelParams { config, tensors, names, slots })
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, slot: usize) -> &Matrix<S> {
        &self.tensors[slot]
    }

    pub fn tensor_mut(&mut self, slot: usize) -> &mut Matrix<S> {
        &mut self.tensors[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Slots belonging to teacher head `i` (projection + classifier).
    pub fn teacher_head_slots(&self, i: usize) -> Vec<usize> {
        let mut v = Vec::new();
        if let Some(p) = self.slots.teacher_projs.get(i) {
            match p {
                ProjSlots::Linear { w, b } => v.extend([*w, *b]),
                ProjSlots::MlpOneHidden { w1, b1, w2, b2 } => v.extend([*w1, *b1, *w2, *b2]),
            }
        }
        if let Some(s) = self.slots.teacher_cls.get(i) {
            v.push(*s);
        }
        v
    }
}

/// Random initialization: weights uniform in (-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)), biases zero. Deterministic in the seed.
pub fn init_params<S: Scalar>(config: ModelConfig, seed: u64) -> Result<ModelParams<S>, ModelError> {
    let mut params = ModelParams::zeroed(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in 0..params.num_tensors() {
        let is_bias = params.name(slot).ends_with(".bias");
        let t = params.tensor_mut(slot);
        if is_bias {
            continue;
        }
        let a = (6.0 / (t.rows + t.cols) as f64).sqrt();
        for v in t.data.iter_mut() {
            *v = S::from_f64_c(rng.gen_range(-a..a));
        }
    }
    debug_assert_eq!(params.param_count(), params.config.param_count());
    assert_eq!(
        params.param_count(),
        params.config.param_count(),
        "parameter count does not match the config-derived closed form"
    );
    Ok(params)
}

/// Which parts of the model a training/eval step binds onto the tape.
#[derive(Clone, Copy, Debug)]
pub struct BindSpec {
    pub domain: Option<usize>,
    pub student: bool,
    pub teacher: bool,
    pub trainable: bool,
}

struct BoundProj {
    slots: ProjSlots,
    ids: Vec<TensorId>,
}

/// Per-step view of the model on one tape: bound parameter tensors plus the
/// forward operations. Gradients are read back through `bound()`.
pub struct ModelGraph<S> {
    backbone: Vec<(TensorId, TensorId)>,
    student_proj: Option<BoundProj>,
    teacher_proj: Option<BoundProj>,
    student_cls: Option<TensorId>,
    teacher_cls: Option<TensorId>,
    baseline_proj: Option<Vec<(TensorId, TensorId)>>,
    bound: Vec<(usize, TensorId)>,
    projector_kind: ProjectorKind,
    inv_temperature: S,
}

impl<S: Scalar> ModelGraph<S> {
    pub fn bind(tape: &mut Tape<S>, params: &ModelParams<S>, spec: BindSpec) -> Result<Self, ModelError> {
        let cfg = &params.config;
        if let Some(d) = spec.domain {
            if d >= cfg.num_domains {
                return Err(ModelError::DomainOutOfRange { index: d, domains: cfg.num_domains });
            }
        }
        let mut bound = Vec::new();
        let bind_one = |tape: &mut Tape<S>, bound: &mut Vec<(usize, TensorId)>, slot: usize| {
            let m = params.tensor(slot);
            let id = if spec.trainable {
                tape.param(m.rows, m.cols, m.data.clone())
            } else {
                tape.input(m.rows, m.cols, m.data.clone())
            };
            bound.push((slot, id));
            id
        };

        let mut backbone = Vec::new();
        for &(w, b) in &params.slots.backbone {
            let wid = bind_one(tape, &mut bound, w);
            let bid = bind_one(tape, &mut bound, b);
            backbone.push((wid, bid));
        }

        let bind_proj = |tape: &mut Tape<S>, bound: &mut Vec<(usize, TensorId)>, slots: &ProjSlots| {
            let ids = match slots {
                ProjSlots::Linear { w, b } => vec![bind_one(tape, bound, *w), bind_one(tape, bound, *b)],
                ProjSlots::MlpOneHidden { w1, b1, w2, b2 } => vec![
                    bind_one(tape, bound, *w1),
                    bind_one(tape, bound, *b1),
                    bind_one(tape, bound, *w2),
                    bind_one(tape, bound, *b2),
                ],
            };
            BoundProj { slots: slots.clone(), ids }
        };

        let student_proj = if spec.student {
            let slots = params.slots.student_proj.as_ref().ok_or(ModelError::MissingHead("student"))?;
            Some(bind_proj(tape, &mut bound, slots))
        } else {
            None
        };
        let teacher_proj = if spec.teacher {
            let d = spec.domain.ok_or(ModelError::MissingHead("teacher (no domain selected)"))?;
            let slots = params.slots.teacher_projs.get(d).ok_or(ModelError::MissingHead("teacher"))?;
            Some(bind_proj(tape, &mut bound, slots))
        } else {
            None
        };

        let student_cls = match (spec.student, spec.domain) {
            (true, Some(d)) => {
                let slot = *params.slots.student_cls.get(d).ok_or(ModelError::MissingHead("student classifier"))?;
                Some(bind_one(tape, &mut bound, slot))
            }
            _ => None,
        };
        let teacher_cls = match (spec.teacher, spec.domain) {
            (true, Some(d)) => {
                let slot = *params.slots.teacher_cls.get(d).ok_or(ModelError::MissingHead("teacher classifier"))?;
                Some(bind_one(tape, &mut bound, slot))
            }
            _ => None,
        };

        let baseline_proj = match (spec.student, spec.domain, cfg.mlp_baseline) {
            (true, Some(d), true) => {
                let layers = params.slots.baseline_proj.get(d).ok_or(ModelError::MissingHead("baseline projector"))?;
                Some(
                    layers
                        .iter()
                        .map(|&(w, b)| (bind_one(tape, &mut bound, w), bind_one(tape, &mut bound, b)))
                        .collect(),
                )
            }
            _ => None,
        };

        Ok(ModelGraph {
            backbone,
            student_proj,
            teacher_proj,
            student_cls,
            teacher_cls,
            baseline_proj,
            bound,
            projector_kind: cfg.projector_kind,
            inv_temperature: S::one() / S::from_f64_c(cfg.classifier_temperature),
        })
    }

    /// (parameter slot, tape tensor) pairs bound by this graph.
    pub fn bound(&self) -> &[(usize, TensorId)] {
        &self.bound
    }

    /// GELU MLP over the batch, output rows normalized to unit norm.
    pub fn backbone_forward(&self, tape: &mut Tape<S>, x: TensorId) -> Result<TensorId, ModelError> {
        let mut h = x;
        let last = self.backbone.len() - 1;
        for (l, &(w, b)) in self.backbone.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_row(lin, b)?;
            if l != last {
                h = tape.gelu(h);
            }
        }
        Ok(tape.row_l2_normalize(h))
    }

    fn project(&self, tape: &mut Tape<S>, proj: &BoundProj, e_b: TensorId) -> Result<TensorId, ModelError> {
        let out = match (&proj.slots, self.projector_kind) {
            (ProjSlots::Linear { .. }, _) => {
                let lin = tape.matmul(e_b, proj.ids[0])?;
                tape.add_row(lin, proj.ids[1])?
            }
            (ProjSlots::MlpOneHidden { .. }, _) => {
                let lin = tape.matmul(e_b, proj.ids[0])?;
                let h = tape.add_row(lin, proj.ids[1])?;
                let ln = tape.layernorm_rows(h);
                let act = tape.gelu(ln);
                let lin2 = tape.matmul(act, proj.ids[2])?;
                tape.add_row(lin2, proj.ids[3])?
            }
        };
        Ok(tape.row_l2_normalize(out))
    }

    /// Universal embedding: projection of e_b, unit-norm rows.
    pub fn student_embed(&self, tape: &mut Tape<S>, e_b: TensorId) -> Result<TensorId, ModelError> {
        let proj = self.student_proj.as_ref().ok_or(ModelError::MissingHead("student"))?;
        self.project(tape, proj, e_b)
    }

    /// Domain-teacher embedding: projection of e_b, unit-norm rows.
    pub fn teacher_embed(&self, tape: &mut Tape<S>, e_b: TensorId) -> Result<TensorId, ModelError> {
        let proj = self.teacher_proj.as_ref().ok_or(ModelError::MissingHead("teacher"))?;
        self.project(tape, proj, e_b)
    }

    /// Student-side logits for the bound domain. With the MLP-baseline flag
    /// the embedding first passes through that domain's projector stack.
    pub fn student_logits(&self, tape: &mut Tape<S>, e_u: TensorId) -> Result<TensorId, ModelError> {
        let cls = self.student_cls.ok_or(ModelError::MissingHead("student classifier"))?;
        let mut emb = e_u;
        if let Some(layers) = &self.baseline_proj {
            for &(w, b) in layers {
                let lin = tape.matmul(emb, w)?;
                let h = tape.add_row(lin, b)?;
                emb = tape.gelu(h);
            }
            emb = tape.row_l2_normalize(emb);
        }
        Ok(logits(tape, cls, emb, self.inv_temperature)?)
    }

    /// Teacher-side logits for the bound domain.
    pub fn teacher_logits(&self, tape: &mut Tape<S>, e_t: TensorId) -> Result<TensorId, ModelError> {
        let cls = self.teacher_cls.ok_or(ModelError::MissingHead("teacher classifier"))?;
        Ok(logits(tape, cls, e_t, self.inv_temperature)?)
    }
}

/// Cosine-classifier logits: embedding rows against row-normalized class
/// weights, scaled by the inverse temperature.
pub fn logits<S: Scalar>(
    tape: &mut Tape<S>,
    class_weights: TensorId,
    embedding: TensorId,
    inv_temperature: S,
) -> Result<TensorId, TensorError> {
    let wn = tape.row_l2_normalize(class_weights);
    let wt = tape.transpose(wn);
    let raw = tape.matmul(embedding, wt)?;
    Ok(tape.scale(raw, inv_temperature))
}

/// Embeds examples with the student head (no gradients), in batches.
pub fn embed_student<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<S>],
) -> Result<Vec<Vec<S>>, ModelError> {
    embed_with(params, features, None)
}

/// Embeds examples with domain `i`'s teacher head (no gradients).
pub fn embed_teacher<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<S>],
    domain: usize,
) -> Result<Vec<Vec<S>>, ModelError> {
    embed_with(params, features, Some(domain))
}

fn embed_with<S: Scalar>(
    params: &ModelParams<S>,
    features: &[Vec<S>],
    teacher_domain: Option<usize>,
) -> Result<Vec<Vec<S>>, ModelError> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(features.len());
    for chunk in features.chunks(CHUNK.max(1)) {
        let rows = chunk.len();
        let cols = params.config.input_dim;
        let mut flat = Vec::with_capacity(rows * cols);
        for f in chunk {
            assert_eq!(f.len(), cols, "feature dimension mismatch");
            flat.extend_from_slice(f);
        }
        let mut tape = Tape::new();
        let x = tape.input(rows, cols, flat);
        let spec = BindSpec {
            domain: teacher_domain,
            student: teacher_domain.is_none(),
            teacher: teacher_domain.is_some(),
            trainable: false,
        };
        let graph = ModelGraph::bind(&mut tape, params, spec)?;
        let e_b = graph.backbone_forward(&mut tape, x)?;
        let emb = match teacher_domain {
            None => graph.student_embed(&mut tape, e_b)?,
            Some(_) => graph.teacher_embed(&mut tape, e_b)?,
        };
        let (_, dim) = tape.shape(emb);
        for row in tape.values(emb).chunks(dim) {
            out.push(row.to_vec());
        }
    }
    Ok(out)
}
