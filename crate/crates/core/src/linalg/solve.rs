use crate::error::{Error, Result};
use crate::linalg::matrix::Matrix;
use crate::linalg::svd::SvdFactors;

/// Smallest ridge actually applied by [`ridge_solve`].
pub const RIDGE_FLOOR: f64 = 1e-12;

/// `V Σ† Uᵀ b`, with `(Σ†)ᵢᵢ = 1/σᵢ` when `σᵢ > eps·σ₁` and zero otherwise.
pub fn pinv_apply(f: &SvdFactors, b: &Matrix, eps: f64) -> Result<Matrix> {
    if f.u.rows() != b.rows() {
        return Err(Error::shape(
            "pinv_apply",
            format!("u has {} rows, rhs has {}", f.u.rows(), b.rows()),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "truncation threshold {eps} must be >= 0"
        )));
    }
    let cutoff = eps * f.sigma.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = f
        .sigma
        .iter()
        .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    let mut ut_b = f.u.t_matmul(b)?;
    for (i, &w) in inv.iter().enumerate() {
        for v in ut_b.row_mut(i) {
            *v *= w;
        }
    }
    f.vt.t_matmul(&ut_b)
}

/// Solves `(gram + eps·I) · M = cross`.
///
/// `eps` below [`RIDGE_FLOOR`] is raised to the floor. Uses Cholesky and
/// falls back to an unpivoted LDLᵀ if a Cholesky pivot is not positive.
pub fn ridge_solve(gram: &Matrix, cross: &Matrix, eps: f64) -> Result<Matrix> {
    let c = gram.rows();
    if !gram.is_square() {
        return Err(Error::shape(
            "ridge_solve",
            format!("gram is {:?}", gram.shape()),
        ));
    }
    if cross.rows() != c {
        return Err(Error::shape(
            "ridge_solve",
            format!("gram is {c}x{c}, cross has {} rows", cross.rows()),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "ridge coefficient {eps} must be >= 0"
        )));
    }
    let asym = gram.max_abs_diff(&gram.transpose());
    if asym > 1e-12 * gram.max_abs().max(1.0) {
        return Err(Error::Domain(format!(
            "gram is not symmetric (max |G - Gᵀ| = {asym:e})"
        )));
    }
    let eps = eps.max(RIDGE_FLOOR);
    let mut a = gram.clone();
    for i in 0..c {
        a[(i, i)] += eps;
    }
    let factor = match cholesky(&a) {
        Some(l) => Factor::Cholesky(l),
        None => {
            let (l, d) = ldlt(&a).ok_or_else(|| {
                Error::Numerical("ridged Gram matrix is singular in both Cholesky and LDLᵀ".into())
            })?;
            Factor::Ldlt(l, d)
        }
    };
    let mut out = Matrix::zeros(c, cross.cols());
    let mut col = vec![0.0; c];
    for k in 0..cross.cols() {
        for i in 0..c {
            col[i] = cross[(i, k)];
        }
        factor.solve_in_place(&mut col);
        for i in 0..c {
            out[(i, k)] = col[i];
        }
    }
    if !out.is_finite() {
        return Err(Error::Numerical(
            "ridge solve produced non-finite values".into(),
        ));
    }
    Ok(out)
}

enum Factor {
    Cholesky(Matrix),
    Ldlt(Matrix, Vec<f64>),
}

impl Factor {
    fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        match self {
            Factor::Cholesky(l) => {
                forward_subst(l, x, true);
                for i in (0..n).rev() {
                    let mut s = x[i];
                    for k in i + 1..n {
                        s -= l[(k, i)] * x[k];
                    }
                    x[i] = s / l[(i, i)];
                }
            }
            Factor::Ldlt(l, d) => {
                forward_subst(l, x, false);
                for i in 0..n {
                    x[i] /= d[i];
                }
                for i in (0..n).rev() {
                    let mut s = x[i];
                    for k in i + 1..n {
                        s -= l[(k, i)] * x[k];
                    }
                    x[i] = s;
                }
            }
        }
    }
}

fn forward_subst(l: &Matrix, x: &mut [f64], divide: bool) {
    for i in 0..x.len() {
        let row = l.row(i);
        let mut s = x[i];
        for k in 0..i {
            s -= row[k] * x[k];
        }
        x[i] = if divide { s / row[i] } else { s };
    }
}

/// Lower Cholesky factor, or `None` if a pivot is not strictly positive.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Unit-lower `L` and diagonal `D` with `A = L D Lᵀ`; `None` on a zero pivot.
fn ldlt(a: &Matrix) -> Option<(Matrix, Vec<f64>)> {
    let n = a.rows();
    let mut l = Matrix::identity(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if dj == 0.0 || !dj.is_finite() {
            return None;
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some((l, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_svd;

    #[test]
    fn pinv_of_identity() {
        let f = thin_svd(&Matrix::identity(3)).unwrap();
        let p = pinv_apply(&f, &Matrix::identity(3), 1e-6).unwrap();
        assert_eq!(p, Matrix::identity(3));
    }

    #[test]
    fn pinv_truncates_exact_zero() {
        let f = thin_svd(&Matrix::from_diag(&[2.0, 0.0])).unwrap();
        let b = Matrix::from_rows(&[[1.0, 3.0], [1.0, -2.0]]);
        let p = pinv_apply(&f, &b, 1e-6).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[0.5, 1.5], [0.0, 0.0]]));
    }

    #[test]
    fn pinv_shape_mismatch() {
        let f = thin_svd(&Matrix::identity(3)).unwrap();
        assert!(matches!(
            pinv_apply(&f, &Matrix::zeros(2, 1), 1e-6),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn ridge_with_zero_eps_uses_floor() {
        let m = ridge_solve(&Matrix::identity(4), &Matrix::identity(4), 0.0).unwrap();
        assert!(m.max_abs_diff(&Matrix::identity(4)) < 1e-11);
    }

    #[test]
    fn ridge_zero_rhs_is_zero() {
        let x = Matrix::from_fn(10, 3, |i, j| ((i + 2 * j) as f64).sin());
        let m = ridge_solve(&x.gram(), &Matrix::zeros(3, 3), 1e-6).unwrap();
        assert_eq!(m, Matrix::zeros(3, 3));
    }

    #[test]
    fn ldlt_fallback_handles_indefinite() {
        // Not PSD: Cholesky fails, LDLᵀ still solves it.
        let g = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        let rhs = Matrix::from_rows(&[[3.0], [3.0]]);
        let m = ridge_solve(&g, &rhs, 0.0).unwrap();
        assert!(m.max_abs_diff(&Matrix::from_rows(&[[1.0], [1.0]])) < 1e-9);
    }

    #[test]
    fn ridge_rejects_asymmetric_and_negative_eps() {
        let g = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(ridge_solve(&g, &Matrix::identity(2), 1e-6).is_err());
        assert!(ridge_solve(&Matrix::identity(2), &Matrix::identity(2), -1.0).is_err());
    }
}
