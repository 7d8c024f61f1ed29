//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Solve `M x = rhs` for symmetric positive definite `M` by Cholesky.
pub fn spd_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.cholesky().map(|c| c.solve(rhs))
}

/// `½(M + Mᵀ)`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖XᵀX − I‖_F`.
pub fn stiefel_defect(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    (x.tr_mul(x) - DMatrix::identity(p, p)).norm()
}

/// Thin QR orthonormalization with the diagonal of `R` made positive.
pub fn qf(y: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = y.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
    }
    q
}

/// Polar factor `Y (YᵀY)^{-1/2}`.
pub fn polar(y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = y.tr_mul(y).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(y * (&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose()))
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(m: &DMatrix<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start with components along every axis
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.7).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = m * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients underestimate; a small safety margin keeps 1/L a valid step
    lambda * 1.01
}
