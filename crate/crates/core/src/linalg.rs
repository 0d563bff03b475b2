//! Small dense complex linear-algebra helpers shared by the per-bin modules.

use nalgebra::{DMatrix, DVector};

use crate::C64;

pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// `Re tr(A^H B)`, the real Frobenius inner product.
pub fn trace_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Replace `m` by `(m + m^H) / 2`.
pub fn make_hermitian(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Largest entry-wise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn real_trace(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Rank-one update `m <- factor * m + weight * v v^H`.
pub fn smooth_outer(m: &mut CMatrix, factor: f64, weight: f64, v: &CVector) {
    let n = v.len();
    for j in 0..n {
        let vj = v[j].conj() * weight;
        for i in 0..n {
            m[(i, j)] = m[(i, j)] * factor + v[i] * vj;
        }
    }
}

/// Solve `A x = b` for Hermitian positive-definite `A` by Cholesky.
pub fn hermitian_solve(a: &CMatrix, b: &CVector) -> Option<CVector> {
    let chol = a.clone().cholesky()?;
    let x = chol.solve(b);
    x.iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
        .then_some(x)
}

/// Symmetric positive-semidefinite square root of a real symmetric matrix,
/// with negative eigenvalues clipped to zero.
pub fn psd_sqrt_real(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&roots) * q.transpose()
}
