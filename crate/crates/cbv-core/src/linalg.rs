//! Dense helpers on top of nalgebra plus a few vector norms.

use nalgebra::{DMatrix, DVector};

use crate::sparse::SparseMatrix;

/// Norm selector `p ∈ {1, 2, ∞}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    One,
    Two,
    Inf,
}

impl NormKind {
    /// Dual exponent `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> NormKind {
        match self {
            NormKind::One => NormKind::Inf,
            NormKind::Two => NormKind::Two,
            NormKind::Inf => NormKind::One,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::One => "1",
            NormKind::Two => "2",
            NormKind::Inf => "inf",
        }
    }
}

pub fn vec_norm(x: &[f64], p: NormKind) -> f64 {
    match p {
        NormKind::One => x.iter().map(|v| v.abs()).sum(),
        NormKind::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Induced operator norm of a dense matrix; the 2-norm is the largest singular value.
pub fn op_norm(a: &DMatrix<f64>, p: NormKind) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    match p {
        NormKind::One => (0..a.ncols())
            .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Inf => (0..a.nrows())
            .map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Two => a
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0, |m, v| m.max(*v)),
    }
}

/// `c·I − M` as a dense matrix.
pub fn shifted_identity_minus(m: &SparseMatrix, c: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = DMatrix::identity(n, n) * c;
    for (i, j, v) in m.iter() {
        a[(i, j)] -= v;
    }
    a
}

pub fn lu_solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    if a.nrows() == 0 {
        return Some(Vec::new());
    }
    let lu = a.clone().lu();
    lu.solve(&DVector::from_column_slice(b))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.as_slice().to_vec())
}

pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    a.clone()
        .lu()
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
}

/// Fixed-iteration power method on `|M|`.
///
/// Iterates the shifted operator `|M| + I` so periodic nonnegative matrices do
/// not oscillate, then reads `‖|M| x‖_∞ / ‖x‖_∞` off the final iterate.
pub fn power_iteration_abs(m: &SparseMatrix, iterations: usize) -> f64 {
    let n = m.nrows();
    if n == 0 || m.nnz() == 0 {
        return 0.0;
    }
    let a = m.abs();
    let mut x = vec![1.0; n];
    let mut last = f64::NAN;
    for _ in 0..iterations {
        let ax = a.mul_vec(&x);
        let y: Vec<f64> = ax.iter().zip(&x).map(|(u, v)| u + v).collect();
        let norm = vec_norm(&y, NormKind::Inf);
        if norm == 0.0 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / norm).collect();
        let est = vec_norm(&a.mul_vec(&x), NormKind::Inf) / vec_norm(&x, NormKind::Inf);
        if (est - last).abs() <= 1e-15 * est.max(1.0) {
            return est;
        }
        last = est;
    }
    last
}
