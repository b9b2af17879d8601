//! Symmetric positive-definite solves and trace helpers.
//!
//! All analytic formulas in this crate reduce to traces of products involving
//! inverses of Gram-type matrices. Solves go through a Cholesky factorization
//! guarded by an eigenvalue-based condition estimate: condition numbers above
//! [`COND_WARN`] are flagged, above [`COND_ERROR`] they are refused.

use alloc::string::ToString;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition number above which a system is flagged as ill-conditioned.
pub const COND_WARN: f64 = 1e12;
/// Condition number above which a solve is refused.
pub const COND_ERROR: f64 = 1e15;

/// Cholesky factorization of a symmetric positive-definite matrix together
/// with its spectral condition number.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    cond: f64,
    dim: usize,
}

impl SpdSolver {
    /// Factorizes `a`, refusing singular or near-singular input.
    ///
    /// # Errors
    ///
    /// [`Error::SingularSystem`] when the smallest eigenvalue is non-positive
    /// or the condition number exceeds [`COND_ERROR`].
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: context.to_string(),
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.to_string(),
            });
        }
        let eigs = a.clone().symmetric_eigenvalues();
        let max = eigs.max();
        let min = eigs.min();
        if min <= 0.0 {
            return Err(Error::SingularSystem {
                context: context.to_string(),
                cond: f64::INFINITY,
            });
        }
        let cond = max / min;
        if cond > COND_ERROR {
            return Err(Error::SingularSystem {
                context: context.to_string(),
                cond,
            });
        }
        let chol = Cholesky::new(a.clone()).ok_or_else(|| Error::SingularSystem {
            context: context.to_string(),
            cond,
        })?;
        Ok(Self {
            chol,
            cond,
            dim: a.nrows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spectral condition number of the factored matrix.
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// True when the condition number exceeds [`COND_WARN`]; results are
    /// still produced but deserve a warning downstream.
    pub fn is_ill_conditioned(&self) -> bool {
        self.cond > COND_WARN
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `tr(A^{-1} B)`.
    pub fn trace_solve(&self, b: &DMatrix<f64>) -> f64 {
        self.solve_mat(b).trace()
    }

    /// Dense inverse of the factored matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `tr(U^T A U)` for symmetric `A`.
pub fn trace_qform(u: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), u.nrows());
    let au = a * u;
    u.iter().zip(au.iter()).map(|(x, y)| x * y).sum()
}

/// Copy of the columns of `a` selected by `cols`, in the given order.
pub fn columns_subset(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        out.set_column(j, &a.column(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_match_direct_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = SpdSolver::new(&a, "test").unwrap();
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let x = s.solve_vec(&b);
        assert_relative_eq!((&a * &x - &b).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            s.trace_solve(&DMatrix::identity(2, 2)),
            s.inverse().trace(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn singular_input_is_refused_with_condition_number() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match SpdSolver::new(&a, "gram") {
            Err(Error::SingularSystem { context, .. }) => assert_eq!(context, "gram"),
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn trace_helpers_agree_with_naive_products() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -1.0, 2.0, 0.0, 1.0]);
        assert_relative_eq!(trace_of_product(&a, &b), (&a * &b).trace(), epsilon = 1e-14);

        let sym = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.2, 0.0, 0.2, 1.0]);
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 1.0, -1.0]);
        assert_relative_eq!(
            trace_qform(&u, &sym),
            (u.transpose() * &sym * &u).trace(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn column_subset_preserves_order() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = columns_subset(&a, &[2, 0]);
        assert_eq!(s[(0, 0)], 3.0);
        assert_eq!(s[(1, 1)], 4.0);
    }
}
