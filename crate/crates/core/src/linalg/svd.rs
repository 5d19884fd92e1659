//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The working copy is held column-major so each rotation touches two
//! contiguous slices. Wide inputs are factored through their transpose.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, Matrix};

/// Sweep cap before reporting non-convergence.
pub const MAX_SWEEPS: usize = 64;

/// A pair of columns counts as orthogonal once `|⟨a,b⟩| ≤ TOL·‖a‖‖b‖`.
pub const ROTATION_TOL: f64 = 1e-12;

/// Thin singular value decomposition `a = u · diag(sigma) · vt`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `rows × r` with orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative, length `r = min(rows, cols)`.
    pub sigma: Vec<f64>,
    /// `r × cols` with orthonormal rows.
    pub vt: Matrix,
    /// Jacobi sweeps used.
    pub sweeps: usize,
}

impl SvdFactors {
    pub fn rank_truncated(&self, eps: f64) -> usize {
        let cutoff = eps * self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > cutoff).count()
    }

    /// `u · diag(sigma) · vt`.
    pub fn reconstruct(&self) -> Matrix {
        let us = self.u.scale_columns(&self.sigma).expect("u has r columns");
        us.matmul(&self.vt).expect("r matches")
    }
}

/// Thin SVD of `a`.
///
/// Fails with [`Error::Convergence`] if the rotations have not settled
/// after [`MAX_SWEEPS`] sweeps.
pub fn thin_svd(a: &Matrix) -> Result<SvdFactors> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::shape(
            "thin_svd",
            format!("empty input {:?}", a.shape()),
        ));
    }
    if !a.is_finite() {
        return Err(Error::Domain("thin_svd on non-finite input".into()));
    }
    if a.rows() >= a.cols() {
        tall_svd(a)
    } else {
        // aᵀ = U Σ Vᵀ  ⇒  a = V Σ Uᵀ
        let f = tall_svd(&a.transpose())?;
        Ok(SvdFactors {
            u: f.vt.transpose(),
            sigma: f.sigma,
            vt: f.u.transpose(),
            sweeps: f.sweeps,
        })
    }
}

fn tall_svd(a: &Matrix) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    // Column j of the working matrix lives at w[j*m..(j+1)*m].
    let mut w = a.transpose().into_vec();
    let mut v = Matrix::identity(n).into_vec();

    let mut sweeps = 0;
    let mut converged = n == 1;
    let mut worst = 0.0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Convergence {
                sweeps,
                off_diagonal: worst,
            });
        }
        sweeps += 1;
        worst = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (head, tail) = w.split_at_mut(q * m);
                let wp = &mut head[p * m..(p + 1) * m];
                let wq = &mut tail[..m];
                let alpha = dot(wp, wp);
                let beta = dot(wq, wq);
                let gamma = dot(wp, wq);
                if alpha == 0.0 || beta == 0.0 || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                if off > worst {
                    worst = off;
                }
                if off <= ROTATION_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vh, vt) = v.split_at_mut(q * n);
                rotate(&mut vh[p * n..(p + 1) * n], &mut vt[..n], c, s);
            }
        }
        converged = worst <= ROTATION_TOL;
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| dot(&w[j * m..(j + 1) * m], &w[j * m..(j + 1) * m]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    // Columns of u, column-major, in sorted order.
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let col = &w[j * m..(j + 1) * m];
        if sigma[j] > 0.0 {
            ucols.push(col.iter().map(|x| x / sigma[j]).collect());
        } else {
            ucols.push(vec![0.0; m]);
            deficient.push(k);
        }
    }
    complete_orthonormal(&mut ucols, &deficient, m);

    sigma = order.iter().map(|&j| sigma[j]).collect();
    let u = Matrix::from_fn(m, n, |i, k| ucols[k][i]);
    let vt = Matrix::from_fn(n, n, |k, i| v[order[k] * n + i]);
    Ok(SvdFactors {
        u,
        sigma,
        vt,
        sweeps,
    })
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Fills the columns listed in `slots` with unit vectors orthogonal to every
/// other column, drawing candidates from the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], slots: &[usize], m: usize) {
    let mut candidate = 0;
    for &slot in slots {
        loop {
            assert!(candidate < m, "ran out of basis vectors");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of modified Gram-Schmidt.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || (slots.contains(&k) && c.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let proj = dot(&e, c);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 0.5 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_orthonormal_cols(u: &Matrix, tol: f64) {
        let g = u.gram();
        assert!(g.max_abs_diff(&Matrix::identity(u.cols())) <= tol, "{g:?}");
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = thin_svd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(f.reconstruct(), Matrix::identity(3));
    }

    #[test]
    fn diagonal_values_come_out_sorted() {
        let f = thin_svd(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 2.0, 1.0]);
        assert!(
            f.reconstruct()
                .max_abs_diff(&Matrix::from_diag(&[1.0, 3.0, 2.0]))
                < 1e-15
        );
    }

    #[test]
    fn zero_singular_value_gets_completed_basis() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let f = thin_svd(&a).unwrap();
        assert_eq!(f.sigma, vec![2.0, 0.0]);
        assert_orthonormal_cols(&f.u, 1e-15);
        assert_orthonormal_cols(&f.vt.transpose(), 1e-15);
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn all_zero_matrix() {
        let f = thin_svd(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(f.sigma, vec![0.0; 3]);
        assert_orthonormal_cols(&f.u, 1e-15);
    }

    #[test]
    fn wide_input_goes_through_transpose() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [2.0, -1.0, 0.5, 0.0]]);
        let f = thin_svd(&a).unwrap();
        assert_eq!(f.u.shape(), (2, 2));
        assert_eq!(f.vt.shape(), (2, 4));
        assert!(f.reconstruct().relative_distance(&a) < 1e-14);
        assert_orthonormal_cols(&f.vt.transpose(), 1e-13);
    }

    #[test]
    fn empty_is_a_shape_error() {
        assert!(matches!(
            thin_svd(&Matrix::zeros(0, 3)),
            Err(Error::Shape { .. })
        ));
    }
}
