//! Convergence metrics shared by all solvers: KKT residuals, Stiefel
//! stationarity, descent checks and empirical contraction rates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::ProjectionOp;
use crate::config::{IterateTrace, SolveStatus, SolverReport};
use crate::linalg::stiefel_defect;
use crate::stiefel::riemannian_grad;

/// Gaps at or below this value are treated as converged when estimating rates.
pub const GAP_FLOOR: f64 = 1e-13;
const MIN_RATE_POINTS: usize = 10;

/// Projected-gradient norm `‖x − Π(x − ∇Φ(x))‖₂`.
pub fn kkt_residual(x: &DVector<f64>, grad: &DVector<f64>, proj: &ProjectionOp) -> f64 {
    (x - proj.project(&(x - grad))).norm()
}

/// Riemannian gradient norm and feasibility defect on the Stiefel manifold.
pub fn stiefel_kkt(x: &DMatrix<f64>, g: &DMatrix<f64>) -> (f64, f64) {
    (riemannian_grad(g, x).norm(), stiefel_defect(x))
}

/// Geometric-mean ratio of successive gaps over the linear tail: the second
/// half of the leading run of gaps above [`GAP_FLOOR`].
pub fn geometric_contraction(gaps: &[f64]) -> Option<f64> {
    if gaps.iter().filter(|g| **g > 1e-14).count() < MIN_RATE_POINTS {
        return None;
    }
    let run = gaps.iter().take_while(|g| **g > GAP_FLOOR).count();
    if run < MIN_RATE_POINTS {
        return None;
    }
    let start = run / 2;
    let first = gaps[start];
    let last = gaps[run - 1];
    let steps = (run - 1 - start) as f64;
    let ratio = (last / first).powf(1.0 / steps);
    (ratio > 0.0 && ratio <= 1.0).then_some(ratio)
}

/// Empirical Q-linear factor of `f(x_k) − f*` along a trace.
pub fn estimate_contraction(trace: &IterateTrace, f_star: f64) -> Option<f64> {
    let gaps: Vec<f64> = trace
        .entries()
        .iter()
        .map(|e| e.objective - f_star)
        .collect();
    geometric_contraction(&gaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescentCheck {
    pub monotone: bool,
    /// Index `k + 1` of the first iterate with `f(x_{k+1}) > f(x_k) + 1e-10`.
    pub first_violation: Option<usize>,
}

/// Checks `f(x_{k+1}) ≤ f(x_k) + 1e-10` along the trace.
pub fn verify_descent(trace: &IterateTrace) -> DescentCheck {
    let f = trace.objectives();
    let first_violation = f
        .windows(2)
        .position(|w| w[1] > w[0] + 1e-10)
        .map(|k| k + 1);
    DescentCheck {
        monotone: first_violation.is_none(),
        first_violation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub final_kkt: f64,
    pub final_feasibility: f64,
    pub iterations: usize,
    pub seconds: f64,
    pub estimated_contraction: Option<f64>,
    pub status: SolveStatus,
}

impl ConvergenceReport {
    pub fn from_report<X>(report: &SolverReport<X>, f_star: Option<f64>) -> Self {
        let last = report.trace.last();
        Self {
            final_kkt: report.final_kkt(),
            final_feasibility: last.map_or(f64::NAN, |e| e.feasibility),
            iterations: report.iterations(),
            seconds: last.map_or(0.0, |e| e.seconds),
            estimated_contraction: f_star.and_then(|fs| estimate_contraction(&report.trace, fs)),
            status: report.status,
        }
    }
}

/// Reference integrators for `f(x) = ½xᵀQx − cᵀx` under a fixed SPD metric.
pub mod linear_model {
    use nalgebra::{DMatrix, DVector};

    /// Backward Euler `x⁺ = (G + ηQ)⁻¹(Gx + ηc)`; returns `x₀, …, x_steps`.
    pub fn backward_euler(
        q: &DMatrix<f64>,
        c: &DVector<f64>,
        metric: &DMatrix<f64>,
        eta: f64,
        x0: &DVector<f64>,
        steps: usize,
    ) -> Vec<DVector<f64>> {
        let lu = (metric + q * eta).lu();
        let mut xs = vec![x0.clone()];
        for _ in 0..steps {
            let x = xs.last().expect("nonempty");
            let rhs = metric * x + c * eta;
            xs.push(lu.solve(&rhs).expect("G + ηQ is SPD"));
        }
        xs
    }

    /// Explicit Euler `x⁺ = x − ηG⁻¹(Qx − c)`.
    pub fn explicit_euler(
        q: &DMatrix<f64>,
        c: &DVector<f64>,
        metric: &DMatrix<f64>,
        eta: f64,
        x0: &DVector<f64>,
        steps: usize,
    ) -> Vec<DVector<f64>> {
        let lu = metric.clone().lu();
        let mut xs = vec![x0.clone()];
        for _ in 0..steps {
            let x = xs.last().expect("nonempty");
            let dir = lu.solve(&(q * x - c)).expect("G is SPD");
            xs.push(x - dir * eta);
        }
        xs
    }
}
