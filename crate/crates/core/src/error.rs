use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed section: {msg}")]
    MalformedSection { line: usize, msg: String },

    #[error("line {line}: resistor references undeclared node `{node}`")]
    DanglingNode { line: usize, node: String },

    #[error("line {line}: value must be strictly positive, got {value}")]
    NonPositiveValue { line: usize, value: f64 },

    #[error("unknown pin or node `{0}`")]
    UnknownPin(String),

    #[error("no resistive path from driver `{driver}` to output `{output}`")]
    DisconnectedOutput { driver: String, output: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("nodal system is singular: {0}")]
    SingularSystem(String),

    #[error("complex pole {re} + {im}j detected")]
    ComplexPoleDetected { re: f64, im: f64 },

    #[error("non-negative pole {0} detected; network is not passive")]
    PositivePoleDetected(f64),

    #[error("transfer function evaluated at its pole {0}")]
    PoleEvaluation(f64),

    #[error("transient step matrix is singular (step {0})")]
    SingularStep(f64),

    #[error("transient time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("dataset schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::ComplexPoleDetected { .. }
                | Error::PositivePoleDetected(_)
                | Error::PoleEvaluation(_)
                | Error::SingularStep(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
