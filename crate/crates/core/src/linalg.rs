//! Dense Cholesky factorization for the small R×R systems of the factor
//! updates.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Lower-triangular factor `L` with `M = L·Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(m: &Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "cholesky of non-square {}x{}",
                n,
                m.cols()
            )));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solves `M·x = b` in place.
    pub fn solve_vec(&self, b: &mut [f64]) {
        let n = self.l.rows();
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    /// Solves `M·X = Bᵀ` given `B` (each row of `B` is one right-hand side)
    /// and returns `Xᵀ`, i.e. the solutions stacked as rows.
    pub fn solve_rows(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.l.rows();
        if b.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "right-hand sides of length {} for a {n}x{n} system",
                b.cols()
            )));
        }
        let mut out = b.clone();
        for row in out.data_mut().chunks_mut(n) {
            self.solve_vec(row);
        }
        Ok(out)
    }
}
