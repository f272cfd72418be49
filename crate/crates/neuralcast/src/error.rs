use thiserror::Error;

use crate::train::TrainReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at stage {stage}, epoch {epoch}: loss is not finite")]
    DivergenceDetected { stage: usize, epoch: usize, report: Box<TrainReport> },
    #[error("gradient mismatch on {} coordinate(s), worst relative error {worst:.3e}", .offending.len())]
    GradMismatch { worst: f64, offending: Vec<String> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] polecast_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
