//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Everything downstream (signal preprocessing, the fusion encoder, the
//! latent decoder, the metric suite) builds on the pieces here:
//!
//! * [`Tensor`] — immutable row-major n-d array, `f32` by default with `f64`
//!   available for numerical oracles,
//! * [`Graph`] — a define-by-run tape; ops record closures that propagate
//!   gradients back to leaf parameters,
//! * [`optim`] — decoupled-weight-decay AdamW,
//! * [`rng`] — a counter-based, seedable generator so every stochastic
//!   operation takes an explicit stream and runs are bitwise reproducible,
//! * [`linalg`] — small dense `f64` routines (symmetric eigensolver, SPD
//!   solve, orthonormalization) used by whitening, Fréchet distance and the
//!   latent codec,
//! * [`gradcheck`] — central finite differences for gradient verification.

pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use graph::{Graph, Var};
pub use optim::{adamw_step, AdamWParams, AdamWState};
pub use rng::RngStream;
pub use tensor::{Scalar, Tensor};

/// Errors surfaced by tensor and graph operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, Error>;
