//! Building blocks for learning RC interconnect waveforms from pole-residue
//! features: SPEF input, nodal analysis and partial fractions, two
//! independent transient oracles, and fixed-shape feature records.

pub mod circuit;
pub mod error;
pub mod featurize;
pub mod network;
pub mod oracle;
pub mod spef;

pub use circuit::{eval_tf, extract_tf, PoleTerm, TransferFunction};
pub use error::{Error, Result};
pub use network::{to_network, RcNetwork};
pub use oracle::{Stimulus, StimulusKind, WaveKind, Waveform};
pub use spef::{emit_spef, generate_spef, parse_spef, SpefNet, ValueRanges};
