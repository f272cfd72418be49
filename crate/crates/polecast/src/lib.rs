//! Reproducible experiments over the pole-residue pipeline: corpus
//! generation, decomposition, simulation, dataset building, training,
//! evaluation and the RMSE-versus-corpus-size sweep.

pub mod commands;
pub mod corpus;
pub mod error;
pub mod sweep;

pub use error::{CliError, Result};
