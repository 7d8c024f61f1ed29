//! Objective oracles: least squares, generic quadratics, linear functions and
//! the separable Stiefel quadratic.
//!
//! Oracles are immutable after construction; every evaluation is a pure
//! function of its argument, so a single problem can be shared across
//! concurrently running trials.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, GravidyError, Result};

/// Value, gradient and (optionally) Hessian of a smooth objective on `R^n`.
///
/// Solvers validate dimensions once at entry; the evaluation methods assume
/// `x.len() == self.dim()`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Dense Hessian, or `None` in Hessian-free mode.
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Hessian-vector product. Falls back to the dense Hessian.
    fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
        self.hessian(x).map(|h| h * v)
    }

    fn value_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.gradient(x))
    }
}

/// `Φ(x) = ½‖Ax − b‖²` with the Gram matrix `AᵀA` cached.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gram: DMatrix<f64>,
    atb: DVector<f64>,
}

impl LeastSquaresProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len(), "least squares: rows of A vs len(b)")?;
        if a.ncols() == 0 {
            return Err(GravidyError::InvalidInput(
                "least squares: A has no columns".into(),
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "least squares: non-finite data".into(),
            ));
        }
        let gram = a.tr_mul(&a);
        let atb = a.tr_mul(&b);
        Ok(Self { a, b, gram, atb })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Cached `Q = AᵀA`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Cached `Aᵀb`.
    pub fn atb(&self) -> &DVector<f64> {
        &self.atb
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Checked evaluation of `(½‖Ax−b‖², Aᵀ(Ax−b), AᵀA)`.
    pub fn value_grad_hess(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        check_dim(self.dim(), x.len(), "least squares: len(x)")?;
        let (v, g) = self.value_grad(x);
        Ok((v, g, self.gram.clone()))
    }
}

impl Objective for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = &self.a * x - &self.b;
        0.5 * r.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.a * x - &self.b;
        self.a.tr_mul(&r)
    }

    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.gram.clone())
    }

    fn hessian_vec(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.gram * v)
    }

    fn value_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = &self.a * x - &self.b;
        (0.5 * r.norm_squared(), self.a.tr_mul(&r))
    }
}

/// `Φ(x) = ½xᵀQx − cᵀx` with symmetric `Q`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    c: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        check_dim(q.nrows(), q.ncols(), "quadratic: Q must be square")?;
        check_dim(q.nrows(), c.len(), "quadratic: len(c)")?;
        let asym = (&q - q.transpose()).norm();
        if asym > 1e-12 * (1.0 + q.norm()) {
            return Err(GravidyError::InvalidInput(
                "quadratic: Q not symmetric".into(),
            ));
        }
        Ok(Self { q, c })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) - self.c.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x - &self.c
    }

    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q.clone())
    }
}

/// `Φ(x) = cᵀx`. With `c = 0` this is the zero objective.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    c: DVector<f64>,
}

impl LinearObjective {
    pub fn new(c: DVector<f64>) -> Self {
        Self { c }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            c: DVector::zeros(n),
        }
    }
}

impl Objective for LinearObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x)
    }

    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.c.clone()
    }

    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.c.len();
        Some(DMatrix::zeros(n, n))
    }
}

/// `Φ(X) = ½ Σⱼ ⟨Q⁽ʲ⁾xⱼ, xⱼ⟩` over `n×p` matrices, one SPD `Q⁽ʲ⁾` per column.
#[derive(Debug, Clone)]
pub struct StiefelQuadraticProblem {
    n: usize,
    q: Vec<DMatrix<f64>>,
}

impl StiefelQuadraticProblem {
    /// Builds the problem, checking symmetry and positive definiteness of
    /// every block.
    pub fn new(q: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = q
            .first()
            .ok_or_else(|| GravidyError::InvalidInput("stiefel: no Q blocks".into()))?;
        let n = first.nrows();
        for (j, qj) in q.iter().enumerate() {
            check_dim(n, qj.nrows(), "stiefel: Q block rows")?;
            check_dim(n, qj.ncols(), "stiefel: Q block cols")?;
            let asym = (qj - qj.transpose()).norm();
            if asym > 1e-10 * (1.0 + qj.norm()) {
                return Err(GravidyError::InvalidInput(format!(
                    "stiefel: Q[{j}] not symmetric"
                )));
            }
            if qj.clone().cholesky().is_none() {
                return Err(GravidyError::InvalidInput(format!(
                    "stiefel: Q[{j}] not positive definite"
                )));
            }
        }
        if q.len() > n {
            return Err(GravidyError::InvalidInput(format!(
                "stiefel: p = {} exceeds n = {n}",
                q.len()
            )));
        }
        Ok(Self { n, q })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.q.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub(crate) fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        check_dim(self.n, x.nrows(), "stiefel: rows of X")?;
        check_dim(self.p(), x.ncols(), "stiefel: cols of X")
    }

    /// The columnwise linear map `G(Y) = [Q⁽¹⁾y₁ … Q⁽ᵖ⁾yₚ]`. This is both the
    /// Euclidean gradient and, by linearity, its own differential.
    pub fn apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.p());
        for (j, qj) in self.q.iter().enumerate() {
            g.set_column(j, &(qj * y.column(j)));
        }
        g
    }

    pub fn value(&self, y: &DMatrix<f64>) -> f64 {
        self.q
            .iter()
            .enumerate()
            .map(|(j, qj)| {
                let c = y.column(j);
                0.5 * c.dot(&(qj * c))
            })
            .sum()
    }

    /// Checked `(Φ(X), G(X))`.
    pub fn value_grad(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_shape(x)?;
        Ok((self.value(x), self.apply(x)))
    }

    /// Largest eigenvalue over all blocks.
    pub fn lambda_max(&self) -> f64 {
        self.q
            .iter()
            .map(|qj| {
                qj.clone()
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn least_squares_identity_data() {
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let (v, g, h) = p
            .value_grad_hess(&DVector::from_vec(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(h, DMatrix::identity(2, 2));
    }

    #[test]
    fn least_squares_zero_residual() {
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), DVector::from_element(2, 1.0))
            .unwrap();
        let (v, g, _) = p.value_grad_hess(&DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, DVector::zeros(2));
    }

    #[test]
    fn least_squares_gradient_at_origin_is_minus_atb() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let p = LeastSquaresProblem::new(a, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let (_, g, _) = p.value_grad_hess(&DVector::zeros(2)).unwrap();
        assert_eq!(g, DVector::from_vec(vec![-1.0, -2.0]));
    }

    #[test]
    fn least_squares_rejects_bad_dims() {
        assert!(LeastSquaresProblem::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(
            p.value_grad_hess(&DVector::zeros(3)),
            Err(GravidyError::Dimension { .. })
        ));
    }

    #[test]
    fn stiefel_identity_blocks() {
        let p = StiefelQuadraticProblem::new(vec![DMatrix::identity(3, 3); 2]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let (v, g) = p.value_grad(&x).unwrap();
        assert_relative_eq!(v, 1.0);
        assert_eq!(g, x);
    }

    #[test]
    fn stiefel_diag_examples() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let p = StiefelQuadraticProblem::new(vec![q]).unwrap();
        let (v, g) = p
            .value_grad(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
            .unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g.as_slice(), &[0.0, 4.0]);
        let (v, g) = p
            .value_grad(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
            .unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn stiefel_rejects_indefinite_and_bad_shape() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(StiefelQuadraticProblem::new(vec![q]).is_err());
        let p = StiefelQuadraticProblem::new(vec![DMatrix::identity(2, 2)]).unwrap();
        assert!(p.value_grad(&DMatrix::zeros(3, 1)).is_err());
    }
}
