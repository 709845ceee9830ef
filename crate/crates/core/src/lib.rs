//! Layer-combined multilayer perceptrons and their per-depth neural tangent
//! kernels.
//!
//! The network keeps a linear readout `f^(ℓ)` at every hidden layer and
//! outputs `f = Σ_ℓ ω_ℓ ⊙ f^(ℓ)` with a learned nonnegative `d × L` matrix Ω.
//! Around it the crate provides:
//!
//! - [`trainer`]: SGD on θ with pull-to-init or weight-decay regularization,
//!   projected gradient on Ω.
//! - [`ntk`]: the analytic per-depth NTK recursion, the Ω-composed kernel
//!   and kernel ridge regression.
//! - [`empirical`]: finite-width kernels from exact Jacobians, for checking
//!   the analytic side.
//! - [`interpret`]: row-normalized Ω, class/layer importance matrices,
//!   sparsity and pgfplots-ready CSV output.
//! - [`data`]: MNIST IDX files, embedding CSVs and synthetic blobs.

pub mod cli;
pub mod data;
pub mod empirical;
pub mod error;
pub mod interpret;
pub mod model;
pub mod ntk;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
