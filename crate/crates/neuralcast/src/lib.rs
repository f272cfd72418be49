//! Hybrid CNN–Transformer regressor that predicts RC interconnect output
//! waveforms from pole-residue features, with the reverse-mode autograd it
//! trains on.
//!
//! A base network learns the response of the dominant pole term; a second
//! network of the same shape learns an additive correction given the base
//! prediction as an extra input channel.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod real;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, Evaluation};
pub use gradcheck::{grad_check, GradCheckReport, GradScope};
pub use model::{HybridNet, ModelConfig, Padding};
pub use real::Real;
pub use tape::{ParamId, ParamStore, Tape, Var};
pub use train::{train, Model, TrainConfig, TrainReport};
