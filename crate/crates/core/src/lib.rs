// Tolerance checks are written as `!(x <= tol)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beables;
pub mod configuration;
pub mod error;
pub mod extended_state;
pub mod generators;
pub mod geometry;
pub mod lattice;
pub mod numerics;
pub mod path_integral;
pub mod qep_alignment;
pub mod quantum_coords;
pub mod quantum_manifold;
pub mod quantum_diffeo;
pub mod scenario;
mod serde_util;

pub use error::{Error, Result};
