//! Nodal analysis and pole-residue decomposition of RC networks.

mod mna;
mod rational;
mod tf;

pub use mna::{assemble_full, assemble_system, FullSystem, NodalSystem};
pub use rational::{expand_repeated, Polynomial, RationalFunction, DEFAULT_CLUSTER_TOL};
pub use tf::{
    check_passivity, eval_tf, extract_from_system, extract_tf, reconstruction_error, residues_by_sampling,
    truncate_dominant, PoleTerm, TransferFunction,
};
