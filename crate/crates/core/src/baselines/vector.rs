use nalgebra::DVector;

use super::ProjectionOp;
use crate::config::{Metrics, OuterLoop, SolveStatus, SolverConfig, SolverReport};
use crate::diagnostics::kkt_residual;
use crate::error::{check_dim, GravidyError, Result};
use crate::linalg::power_iteration;
use crate::problem::{LeastSquaresProblem, Objective};
use crate::reparam::softmax;

const BB_MIN: f64 = 1e-10;
const BB_MAX: f64 = 1e10;
const GLL_MEMORY: usize = 10;
const MU_FLOOR: f64 = 1e-16;

fn lipschitz<O: Objective + ?Sized>(
    prob: &O,
    x0: &DVector<f64>,
    method: &'static str,
) -> Result<f64> {
    let h = prob
        .hessian(x0)
        .ok_or(GravidyError::MissingHessian(method))?;
    Ok(power_iteration(&h, 500))
}

fn check_start<O: Objective + ?Sized>(
    prob: &O,
    proj: &ProjectionOp,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<()> {
    config.validate()?;
    check_dim(prob.dim(), x0.len(), "len(x0)")?;
    if let ProjectionOp::Box { lower, .. } = proj {
        check_dim(prob.dim(), lower.len(), "box bounds")?;
    }
    if x0.iter().any(|t| !t.is_finite()) || proj.infeasibility(x0) > 1e-10 {
        return Err(GravidyError::InvalidInput("x0 must be feasible".into()));
    }
    Ok(())
}

/// Projected gradient with Nesterov momentum, step `1/L` from power
/// iteration, backtracking on the quadratic upper model and function-value
/// restart.
pub fn pgd_nesterov<O: Objective + ?Sized>(
    prob: &O,
    proj: &ProjectionOp,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverReport<DVector<f64>>> {
    check_start(prob, proj, x0, config)?;
    let l = lipschitz(prob, x0, "PGD+Nesterov")?;
    let mut t = if l > 0.0 { 1.0 / l } else { 1.0 };
    let mut x = x0.clone();
    let mut x_prev = x0.clone();
    let mut theta: f64 = 1.0;
    let mut lp = OuterLoop::new(config);
    let (mut fx, mut gx) = prob.value_grad(&x);
    let mut backtracks = 0;

    // projected step from y with backtracking; returns (x⁺, f(x⁺), backtracks)
    let step = |y: &DVector<f64>, t: &mut f64| -> (DVector<f64>, f64, usize) {
        let (fy, gy) = prob.value_grad(y);
        let mut count = 0;
        loop {
            let xn = proj.project(&(y - &gy * *t));
            let d = &xn - y;
            let fx_new = prob.value(&xn);
            if fx_new <= fy + gy.dot(&d) + d.norm_squared() / (2.0 * *t) + 1e-14 * fy.abs()
                || *t < 1e-20
            {
                return (xn, fx_new, count);
            }
            *t *= config.backtrack_beta;
            count += 1;
        }
    };

    loop {
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: kkt_residual(&x, &gx, proj),
            feasibility: proj.infeasibility(&x),
            inner_iterations: backtracks,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let y = &x + (&x - &x_prev) * ((theta - 1.0) / theta_next);
        let (mut xn, mut fn_, mut count) = step(&y, &mut t);
        let mut theta_new = theta_next;
        if fn_ > fx {
            // restart from x without momentum
            let (xr, fr, cr) = step(&x, &mut t);
            xn = xr;
            fn_ = fr;
            count += cr;
            theta_new = 1.0;
        }
        backtracks = count;
        x_prev = std::mem::replace(&mut x, xn);
        theta = theta_new;
        fx = fn_;
        gx = prob.gradient(&x);
    }
}

/// Projected Barzilai–Borwein (BB1) with a nonmonotone Armijo search over the
/// last ten objective values.
pub fn projected_bb<O: Objective + ?Sized>(
    prob: &O,
    proj: &ProjectionOp,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverReport<DVector<f64>>> {
    check_start(prob, proj, x0, config)?;
    let l = lipschitz(prob, x0, "projected BB")?;
    let fallback = if l > 0.0 { 1.0 / l } else { 1.0 };
    let mut tau = fallback;
    let mut x = x0.clone();
    let (mut fx, mut gx) = prob.value_grad(&x);
    let mut history = vec![fx];
    let mut lp = OuterLoop::new(config);
    let mut backtracks = 0;
    loop {
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: kkt_residual(&x, &gx, proj),
            feasibility: proj.infeasibility(&x),
            inner_iterations: backtracks,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        let d = proj.project(&(&x - &gx * tau)) - &x;
        let slope = gx.dot(&d);
        let f_ref = history
            .iter()
            .rev()
            .take(GLL_MEMORY)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        backtracks = 0;
        let (xn, fxn) = loop {
            let trial = &x + &d * lambda;
            let ft = prob.value(&trial);
            if ft <= f_ref + config.armijo_c * lambda * slope {
                break (trial, ft);
            }
            lambda *= config.backtrack_beta;
            backtracks += 1;
            if lambda < 1e-16 {
                return Ok(lp.finish(x, SolveStatus::Stalled));
            }
        };
        let gn = prob.gradient(&xn);
        let s = &xn - &x;
        let yv = &gn - &gx;
        let sty = s.dot(&yv);
        tau = if sty > 0.0 {
            (s.norm_squared() / sty).clamp(BB_MIN, BB_MAX)
        } else {
            fallback
        };
        x = xn;
        fx = fxn;
        gx = gn;
        history.push(fx);
    }
}

/// Lee–Seung multiplicative updates `x ← x ⊙ Aᵀb ⊘ AᵀAx` for NNLS with
/// nonnegative data.
pub fn multiplicative_updates_nnls(
    prob: &LeastSquaresProblem,
    x0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverReport<DVector<f64>>> {
    config.validate()?;
    check_dim(prob.dim(), x0.len(), "len(x0)")?;
    if prob.a().iter().any(|v| *v < 0.0) || prob.b().iter().any(|v| *v < 0.0) {
        return Err(GravidyError::InvalidInput(
            "multiplicative updates require A >= 0 and b >= 0".into(),
        ));
    }
    if x0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(GravidyError::InvalidInput(
            "multiplicative updates require x0 > 0".into(),
        ));
    }
    let proj = ProjectionOp::Orthant;
    let mut x = x0.clone();
    let mut lp = OuterLoop::new(config);
    loop {
        let (fx, gx) = prob.value_grad(&x);
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: kkt_residual(&x, &gx, &proj),
            feasibility: proj.infeasibility(&x),
            inner_iterations: 0,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        let denom = prob.gram() * &x;
        x = DVector::from_fn(x.len(), |i, _| {
            x[i] * prob.atb()[i] / denom[i].max(MU_FLOOR)
        });
    }
}

/// Stepsize rule for [`entropic_mirror_descent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmdStep {
    /// `η_k = √(2 ln n) / (‖∇f(x_k)‖∞ √k)`.
    Decaying,
    /// Constant `η` halved until
    /// `f(x⁺) ≤ f(x) + ∇f(x)ᵀ(x⁺ − x) + KL(x⁺‖x)/η`.
    Backtracking { eta: f64 },
}

fn kl(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .filter(|(ai, _)| **ai > 0.0)
        .map(|(ai, bi)| ai * (ai / bi).ln())
        .sum()
}

/// Entropic mirror descent `x⁺ ∝ x ⊙ exp(−η∇f(x))` on the simplex.
pub fn entropic_mirror_descent<O: Objective + ?Sized>(
    prob: &O,
    x0: &DVector<f64>,
    config: &SolverConfig,
    rule: EmdStep,
) -> Result<SolverReport<DVector<f64>>> {
    config.validate()?;
    check_dim(prob.dim(), x0.len(), "len(x0)")?;
    crate::simplex::check_interior(x0)?;
    if let EmdStep::Backtracking { eta } = rule {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "EMD: eta must be positive".into(),
            ));
        }
    }
    let n = x0.len();
    let proj = ProjectionOp::Simplex;
    let mut x = x0.clone();
    let mut lp = OuterLoop::new(config);
    let mut step_eta = match rule {
        EmdStep::Backtracking { eta } => eta,
        EmdStep::Decaying => 0.0,
    };
    let mut backtracks = 0;
    let mut k = 0usize;
    loop {
        let (fx, gx) = prob.value_grad(&x);
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: kkt_residual(&x, &gx, &proj),
            feasibility: proj.infeasibility(&x),
            inner_iterations: backtracks,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        k += 1;
        let logx = x.map(|t| t.ln());
        let update = |eta: f64| softmax(&(&logx - &gx * eta));
        x = match rule {
            EmdStep::Decaying => {
                let ginf = gx.amax();
                if ginf == 0.0 {
                    x
                } else {
                    let eta =
                        (2.0 * (n as f64).ln()).sqrt().max(1e-12) / (ginf * (k as f64).sqrt());
                    update(eta)
                }
            }
            EmdStep::Backtracking { .. } => {
                backtracks = 0;
                loop {
                    let xn = update(step_eta);
                    let bound = fx + gx.dot(&(&xn - &x)) + kl(&xn, &x) / step_eta;
                    if prob.value(&xn) <= bound + 1e-14 * fx.abs() || step_eta < 1e-16 {
                        break xn;
                    }
                    step_eta *= config.backtrack_beta;
                    backtracks += 1;
                }
            }
        };
    }
}
