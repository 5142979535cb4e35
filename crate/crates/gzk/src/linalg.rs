//! Dense symmetric positive-definite solves shared by the leverage-score and
//! regression paths. Desk scale only: everything is O(n^3) and in-memory.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors `a = L L^T`. Errors if a pivot is not strictly positive, which
    /// signals loss of positive definiteness beyond round-off.
    pub(crate) fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Config(format!(
                "Cholesky requires a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite: pivot {j} = {diag:.6e}"
                )));
            }
            let diag = diag.sqrt();
            l[(j, j)] = diag;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / diag;
            }
        }
        Ok(Self { l })
    }

    pub(crate) fn n(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `a x = b` via forward and back substitution.
    pub(crate) fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.n();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let mut x = b.to_owned();
        // L y = b
        for i in 0..n {
            let mut v = x[i];
            for k in 0..i {
                v -= self.l[(i, k)] * x[k];
            }
            x[i] = v / self.l[(i, i)];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in (i + 1)..n {
                v -= self.l[(k, i)] * x[k];
            }
            x[i] = v / self.l[(i, i)];
        }
        x
    }

    /// `b^T a^{-1} b` without forming the inverse: with `L z = b`, the
    /// quadratic form equals `||z||^2`.
    pub(crate) fn quad_form(&self, b: ArrayView1<'_, f64>) -> f64 {
        let n = self.n();
        assert_eq!(b.len(), n, "vector length mismatch");
        let mut z = b.to_owned();
        let mut total = 0.0;
        for i in 0..n {
            let mut v = z[i];
            for k in 0..i {
                v -= self.l[(i, k)] * z[k];
            }
            let zi = v / self.l[(i, i)];
            z[i] = zi;
            total += zi * zi;
        }
        total
    }
}

pub(crate) fn frobenius_norm(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_and_solve_small_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.5], [0.6, 1.5, 3.0]];
        let chol = Cholesky::new(a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = chol.solve(b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn quad_form_matches_solve() {
        let a = array![[3.0, 1.0], [1.0, 2.0]];
        let chol = Cholesky::new(a.view()).unwrap();
        let b = array![0.7, -1.3];
        let direct = b.dot(&chol.solve(b.view()));
        assert!((chol.quad_form(b.view()) - direct).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        assert!(Cholesky::new(a.view()).is_err());
    }
}
