//! Reparameterization maps `x = g(ζ)` onto the orthant, box and simplex,
//! together with their derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, GravidyError, Result};

/// Exponent arguments are clamped to this magnitude before evaluation.
pub const CLAMP: f64 = 500.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ReparamMap {
    /// `g(u) = exp(u)`.
    Exp,
    /// `g(u) = log cosh(u)`; positive away from `u = 0` and increasing on `u > 0`.
    LogCosh,
    /// `g(w) = ℓ + (b − ℓ) σ(w)`.
    SigmoidBox {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `g(u) = softmax(u)`.
    Softmax,
}

/// Derivative of a map: diagonal for componentwise kinds, dense for softmax.
#[derive(Debug, Clone, PartialEq)]
pub enum MapDerivative {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl MapDerivative {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            MapDerivative::Diagonal(d) => DMatrix::from_diagonal(d),
            MapDerivative::Full(m) => m.clone(),
        }
    }
}

pub(crate) fn clamp_arg(t: f64) -> f64 {
    t.clamp(-CLAMP, CLAMP)
}

/// Logistic function, evaluated without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `σ(t)(1 − σ(t))`, evaluated as `e^{-|t|}/(1+e^{-|t|})²`.
fn sigmoid_slope(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `log cosh(u)` as `|u| + log1p(exp(−2|u|)) − log 2`.
pub fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Numerically stable softmax.
pub fn softmax(u: &DVector<f64>) -> DVector<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut x = u.map(|t| (clamp_arg(t - m)).exp());
    let s = x.sum();
    x /= s;
    x
}

/// `diag(x) − xxᵀ`.
pub fn softmax_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(x) - x * x.transpose()
}

fn box_point(lo: f64, hi: f64, w: f64) -> f64 {
    let width = hi - lo;
    let x = if w <= 0.0 {
        lo + width * sigmoid(w)
    } else {
        hi - width * sigmoid(-w)
    };
    // keep the point strictly inside even when σ saturates in floating point
    if x <= lo {
        lo.next_up()
    } else if x >= hi {
        hi.next_down()
    } else {
        x
    }
}

impl ReparamMap {
    pub fn sigmoid_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len(), "box: len(lower) vs len(upper)")?;
        if lower
            .iter()
            .zip(upper.iter())
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(GravidyError::InvalidInput(
                "box: need finite bounds with lower < upper".into(),
            ));
        }
        Ok(ReparamMap::SigmoidBox { lower, upper })
    }

    fn check_input(&self, zeta: &DVector<f64>) -> Result<()> {
        if zeta.iter().any(|v| !v.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "reparam: non-finite argument".into(),
            ));
        }
        if let ReparamMap::SigmoidBox { lower, .. } = self {
            check_dim(lower.len(), zeta.len(), "box reparam: len(w)")?;
        }
        Ok(())
    }

    /// `x = g(ζ)`. Arguments are clamped to `[-CLAMP, CLAMP]`.
    pub fn apply(&self, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(zeta)?;
        Ok(self.apply_unchecked(zeta))
    }

    pub(crate) fn apply_unchecked(&self, zeta: &DVector<f64>) -> DVector<f64> {
        match self {
            ReparamMap::Exp => zeta.map(|u| clamp_arg(u).exp()),
            ReparamMap::LogCosh => zeta.map(|u| log_cosh(clamp_arg(u))),
            ReparamMap::SigmoidBox { lower, upper } => DVector::from_iterator(
                zeta.len(),
                zeta.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(&w, (&l, &u))| box_point(l, u, clamp_arg(w))),
            ),
            ReparamMap::Softmax => softmax(zeta),
        }
    }

    /// Derivative of `g` at `ζ`.
    pub fn derivative(&self, zeta: &DVector<f64>) -> Result<MapDerivative> {
        self.check_input(zeta)?;
        Ok(self.derivative_unchecked(zeta))
    }

    pub(crate) fn derivative_unchecked(&self, zeta: &DVector<f64>) -> MapDerivative {
        match self {
            ReparamMap::Exp => MapDerivative::Diagonal(zeta.map(|u| clamp_arg(u).exp())),
            ReparamMap::LogCosh => MapDerivative::Diagonal(zeta.map(|u| clamp_arg(u).tanh())),
            ReparamMap::SigmoidBox { lower, upper } => {
                MapDerivative::Diagonal(DVector::from_iterator(
                    zeta.len(),
                    zeta.iter()
                        .zip(lower.iter().zip(upper.iter()))
                        .map(|(&w, (&l, &u))| (u - l) * sigmoid_slope(clamp_arg(w))),
                ))
            }
            ReparamMap::Softmax => MapDerivative::Full(softmax_jacobian(&softmax(zeta))),
        }
    }

    /// A preimage `ζ` with `g(ζ) = x`, used to initialize solvers from a
    /// primal point. For softmax the gauge is fixed by `ζ = log x`.
    pub fn inverse(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let bad = |what: &str| GravidyError::InvalidInput(format!("reparam inverse: {what}"));
        match self {
            ReparamMap::Exp => {
                if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(bad("x must be strictly positive"));
                }
                Ok(x.map(|v| clamp_arg(v.ln())))
            }
            ReparamMap::LogCosh => {
                if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(bad("x must be strictly positive"));
                }
                // acosh(e^x) on the positive branch
                Ok(x.map(|v| {
                    if v > 30.0 {
                        clamp_arg(v + std::f64::consts::LN_2)
                    } else {
                        let t = v.exp_m1();
                        clamp_arg((t + (t * (t + 2.0)).sqrt()).ln_1p())
                    }
                }))
            }
            ReparamMap::SigmoidBox { lower, upper } => {
                check_dim(lower.len(), x.len(), "box reparam inverse: len(x)")?;
                let mut w = DVector::zeros(x.len());
                for i in 0..x.len() {
                    let (l, u, v) = (lower[i], upper[i], x[i]);
                    if !(v > l && v < u) {
                        return Err(bad("x must lie strictly inside the box"));
                    }
                    w[i] = clamp_arg((v - l).ln() - (u - v).ln());
                }
                Ok(w)
            }
            ReparamMap::Softmax => {
                if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(bad("x must be strictly positive"));
                }
                Ok(x.map(|v| v.ln()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn unit_box(n: usize) -> ReparamMap {
        ReparamMap::sigmoid_box(DVector::zeros(n), DVector::from_element(n, 1.0)).unwrap()
    }

    #[test]
    fn exp_at_zero() {
        assert_eq!(
            ReparamMap::Exp.apply(&v(&[0.0, 0.0])).unwrap(),
            v(&[1.0, 1.0])
        );
        assert_eq!(
            ReparamMap::Exp.derivative(&v(&[0.0])).unwrap(),
            MapDerivative::Diagonal(v(&[1.0]))
        );
    }

    #[test]
    fn sigmoid_box_midpoint() {
        let m = unit_box(1);
        assert_eq!(m.apply(&v(&[0.0])).unwrap(), v(&[0.5]));
        assert_eq!(
            m.derivative(&v(&[0.0])).unwrap(),
            MapDerivative::Diagonal(v(&[0.25]))
        );
    }

    #[test]
    fn softmax_examples() {
        let x = ReparamMap::Softmax.apply(&v(&[2f64.ln(), 0.0])).unwrap();
        assert_relative_eq!(x[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 1.0 / 3.0, epsilon = 1e-15);
        let j = ReparamMap::Softmax.derivative(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(
            j,
            MapDerivative::Full(DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]))
        );
    }

    #[test]
    fn overflow_is_clamped() {
        let x = ReparamMap::Exp.apply(&v(&[1e6, -1e6])).unwrap();
        assert!(x[0].is_finite() && x[1] > 0.0);
        let s = ReparamMap::Softmax.apply(&v(&[1e6, 0.0, -1e6])).unwrap();
        assert!(s.iter().all(|t| *t > 0.0));
        assert_relative_eq!(s.sum(), 1.0, epsilon = 1e-12);
        assert!(ReparamMap::Exp.apply(&v(&[f64::NAN])).is_err());
    }

    #[test]
    fn saturated_box_stays_strictly_inside() {
        let m = ReparamMap::sigmoid_box(v(&[-1.0, 1.0 - 1e-12]), v(&[1.0, 1.0])).unwrap();
        for w in [-500.0, -40.0, 40.0, 500.0] {
            let x = m.apply(&v(&[w, w])).unwrap();
            assert!(x[0] > -1.0 && x[0] < 1.0, "{x}");
            assert!(x[1] > 1.0 - 1e-12 && x[1] < 1.0, "{x}");
        }
    }

    #[test]
    fn log_cosh_stable_form() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert_relative_eq!(log_cosh(1.3), 1.3f64.cosh().ln(), epsilon = 1e-14);
        assert!(log_cosh(800.0).is_finite());
    }

    #[test]
    fn inverses_round_trip() {
        let x = v(&[0.3, 1.7, 4.0]);
        for m in [ReparamMap::Exp, ReparamMap::LogCosh] {
            let back = m.apply(&m.inverse(&x).unwrap()).unwrap();
            assert_relative_eq!(back, x, epsilon = 1e-12);
        }
        let m = ReparamMap::sigmoid_box(v(&[-1.0; 3]), v(&[1.0, 2.0, 5.0])).unwrap();
        let y = v(&[0.2, 1.9, -0.99]);
        assert_relative_eq!(
            m.apply(&m.inverse(&y).unwrap()).unwrap(),
            y,
            epsilon = 1e-12
        );
        assert!(m.inverse(&v(&[1.0, 0.0, 0.0])).is_err());
    }

    proptest! {
        #[test]
        fn targets_and_positive_slopes(u in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
            let n = u.len();
            let z = DVector::from_vec(u.clone());
            let x = ReparamMap::Exp.apply(&z).unwrap();
            prop_assert!(x.iter().all(|t| *t > 0.0));
            let b = unit_box(n);
            let xb = b.apply(&z).unwrap();
            prop_assert!(xb.iter().all(|t| *t > 0.0 && *t < 1.0));
            for m in [ReparamMap::Exp, b] {
                if let MapDerivative::Diagonal(d) = m.derivative(&z).unwrap() {
                    prop_assert!(d.iter().all(|t| *t > 0.0));
                }
            }
            let s = ReparamMap::Softmax.apply(&z).unwrap();
            prop_assert!(s.iter().all(|t| *t > 0.0));
            prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn logcosh_positive_branch(u in proptest::collection::vec(1e-3f64..50.0, 1..8)) {
            let z = DVector::from_vec(u);
            let x = ReparamMap::LogCosh.apply(&z).unwrap();
            prop_assert!(x.iter().all(|t| *t > 0.0));
            if let MapDerivative::Diagonal(d) = ReparamMap::LogCosh.derivative(&z).unwrap() {
                prop_assert!(d.iter().all(|t| *t > 0.0));
            }
        }

        #[test]
        fn diagonal_maps_are_increasing(mut u in proptest::collection::vec(-30.0f64..30.0, 2..10)) {
            u.sort_by(|a, b| a.partial_cmp(b).unwrap());
            u.dedup();
            let z = DVector::from_vec(u.clone());
            let n = z.len();
            for m in [ReparamMap::Exp, unit_box(n)] {
                let x = m.apply(&z).unwrap();
                for i in 1..n {
                    prop_assert!(x[i] >= x[i - 1]);
                }
            }
            let pos: Vec<f64> = u.iter().map(|t| t.abs() + 1e-3).collect();
            let mut pos = pos;
            pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let x = ReparamMap::LogCosh.apply(&DVector::from_vec(pos)).unwrap();
            for i in 1..x.len() {
                prop_assert!(x[i] >= x[i - 1]);
            }
        }

        #[test]
        fn softmax_jacobian_structure(u in proptest::collection::vec(-5.0f64..5.0, 2..8)) {
            let z = DVector::from_vec(u);
            let n = z.len();
            let j = match ReparamMap::Softmax.derivative(&z).unwrap() {
                MapDerivative::Full(j) => j,
                _ => unreachable!(),
            };
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((&j * &ones).amax() <= 1e-12);
            prop_assert!((&j - j.transpose()).amax() <= 1e-12);
            let mut eig: Vec<f64> = j.symmetric_eigenvalues().iter().cloned().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(eig[0] >= -1e-12);
            prop_assert!(eig.iter().filter(|e| **e <= 1e-10).count() == 1);
        }
    }
}
