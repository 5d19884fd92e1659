use crate::error::{Error, Result};
use crate::linalg::matrix::Matrix;

/// Normalized Sylvester–Walsh–Hadamard matrix of order `c`.
///
/// Entry `(i, j)` is `(-1)^popcount(i & j) / √c`, so `H = Hᵀ = H⁻¹`.
/// Only powers of two are accepted; there is no padding.
pub fn hadamard_matrix(c: usize) -> Result<Matrix> {
    if !c.is_power_of_two() {
        return Err(Error::UnsupportedDimension {
            dim: c,
            reason: "Walsh-Hadamard matrices need a power-of-two order",
        });
    }
    let scale = 1.0 / (c as f64).sqrt();
    Ok(Matrix::from_fn(c, c, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            scale
        } else {
            -scale
        }
    }))
}
