//! Universal-embedding trainer.
//!
//! A single shared backbone feeds one low-dimensional "universal" student
//! head and one specialized teacher head per domain. All heads are trained
//! jointly: classification on every head, plus relational and logit
//! distillation from the active domain's teacher into the student. Domains
//! are selected per batch by a configurable sampler, including a dynamic
//! policy that samples domains proportionally to their recent training loss.
//!
//! The numeric core (`autograd`, `losses`, `eval`) is generic over the
//! scalar type; the training pipeline instantiates it at `f64`.

pub mod ablate;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod losses;
pub mod model;
pub mod optim;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

/// Concrete aliases for the default (f64) pipeline.
pub type Tape64 = autograd::Tape<f64>;
pub type Gradients64 = autograd::Gradients<f64>;
