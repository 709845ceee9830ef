//! Dense linear algebra and seeded randomness shared by every other module.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{cholesky, cholesky_solve, is_positive_semidefinite, CholeskyFactor};
pub use matrix::{dot, dot4, matmul_into, matmul_t_into, Matrix};
pub use rng::{normal_sample, Rng};
