use crate::error::{Error, Result};
use crate::linalg::matrix::Matrix;

/// Running `XᵀX` and `XᵀY` over row batches, so the full calibration set
/// never has to be held at once.
#[derive(Clone, Debug, PartialEq)]
pub struct GramAccumulator {
    gram: Matrix,
    cross: Matrix,
    token_count: u64,
}

impl GramAccumulator {
    /// Empty accumulator for `x` with `dim` columns and `y` with `targets`
    /// columns.
    pub fn new(dim: usize, targets: usize) -> Self {
        GramAccumulator {
            gram: Matrix::zeros(dim, dim),
            cross: Matrix::zeros(dim, targets),
            token_count: 0,
        }
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn cross(&self) -> &Matrix {
        &self.cross
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    /// Folds one batch in place.
    pub fn accumulate(&mut self, x_batch: &Matrix, y_batch: &Matrix) -> Result<()> {
        if x_batch.rows() != y_batch.rows() {
            return Err(Error::shape(
                "gram_accumulate",
                format!("x has {} rows, y has {}", x_batch.rows(), y_batch.rows()),
            ));
        }
        if x_batch.cols() != self.gram.rows() || y_batch.cols() != self.cross.cols() {
            return Err(Error::shape(
                "gram_accumulate",
                format!(
                    "batch {:?}/{:?} into accumulator {}x{}",
                    x_batch.shape(),
                    y_batch.shape(),
                    self.gram.rows(),
                    self.cross.cols()
                ),
            ));
        }
        self.gram.add_assign(&x_batch.gram())?;
        self.cross.add_assign(&x_batch.t_matmul(y_batch)?)?;
        self.token_count += x_batch.rows() as u64;
        Ok(())
    }
}

/// Functional form of [`GramAccumulator::accumulate`].
pub fn gram_accumulate(
    mut acc: GramAccumulator,
    x_batch: &Matrix,
    y_batch: &Matrix,
) -> Result<GramAccumulator> {
    acc.accumulate(x_batch, y_batch)?;
    Ok(acc)
}
