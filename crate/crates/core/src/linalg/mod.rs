//! Dense kernels behind every operator fit.

mod gram;
mod hadamard;
mod matrix;
mod solve;
mod svd;

pub use gram::{gram_accumulate, GramAccumulator};
pub use hadamard::hadamard_matrix;
pub use matrix::{ActivationMatrix, Matrix};
pub use solve::{pinv_apply, ridge_solve, RIDGE_FLOOR};
pub use svd::{thin_svd, SvdFactors, MAX_SWEEPS, ROTATION_TOL};

pub(crate) use matrix::dot;
