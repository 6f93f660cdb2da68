//! Dense symmetric positive-definite helpers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factor a symmetric positive-definite matrix. Only the lower triangle
    /// of `a` is read.
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky of a non-square matrix");
        let mut l = Array2::<f64>::zeros((n, n));
        {
            let ls = l.as_slice_mut().expect("fresh array is contiguous");
            for i in 0..n {
                for j in 0..=i {
                    let (row_i, row_j) = (i * n, j * n);
                    let mut s = a[(i, j)];
                    for k in 0..j {
                        s -= ls[row_i + k] * ls[row_j + k];
                    }
                    if i == j {
                        if !(s > 0.0) || !s.is_finite() {
                            return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                        }
                        ls[row_i + i] = s.sqrt();
                    } else {
                        ls[row_i + j] = s / ls[row_j + j];
                    }
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solve `L z = b`.
    pub fn solve_lower(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        let ls = self.l.as_slice().expect("contiguous");
        let mut z = b.to_owned();
        for i in 0..n {
            let row = &ls[i * n..i * n + i];
            let s: f64 = row.iter().zip(z.iter()).map(|(l, z)| l * z).sum();
            z[i] = (z[i] - s) / ls[i * n + i];
        }
        z
    }

    /// Solve `Lᵀ x = z`.
    pub fn solve_upper(&self, z: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        let ls = self.l.as_slice().expect("contiguous");
        let mut x = z.to_owned();
        for i in (0..n).rev() {
            x[i] /= ls[i * n + i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= ls[i * n + k] * xi;
            }
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let z = self.solve_lower(b);
        self.solve_upper(z.view())
    }
}

/// `Xᵀ diag(w) X`.
pub fn weighted_gram(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut xw = x.to_owned();
    for (mut row, wi) in xw.axis_iter_mut(Axis(0)).zip(w.iter()) {
        row *= wi.sqrt();
    }
    xw.t().dot(&xw)
}

/// `Xᵀ diag(w) y`.
pub fn weighted_cross(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Array1<f64> {
    let wy = &w * &y;
    x.t().dot(&wy)
}
