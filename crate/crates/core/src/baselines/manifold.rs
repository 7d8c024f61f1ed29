use nalgebra::DMatrix;

use crate::config::{Metrics, OuterLoop, SolveStatus, SolverConfig, SolverReport};
use crate::error::{GravidyError, Result};
use crate::linalg::{qf, stiefel_defect};
use crate::problem::StiefelQuadraticProblem;
use crate::stiefel::{riemannian_grad, StiefelPoint};

const TAU_MIN: f64 = 1e-20;
const TAU_MAX: f64 = 1e10;

fn initial_tau(prob: &StiefelQuadraticProblem) -> f64 {
    let l = prob.lambda_max();
    if l > 0.0 {
        1.0 / l
    } else {
        1.0
    }
}

/// Feasible Cayley curve `Y(τ) = X − τU(I + (τ/2)VᵀU)⁻¹VᵀX` with
/// `U = [G, X]`, `V = [X, −G]`, so that `UVᵀ = GXᵀ − XGᵀ`.
pub(crate) fn cayley_curve(x: &DMatrix<f64>, g: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let (n, p) = x.shape();
    let mut u = DMatrix::zeros(n, 2 * p);
    u.columns_mut(0, p).copy_from(g);
    u.columns_mut(p, p).copy_from(x);
    let mut v = DMatrix::zeros(n, 2 * p);
    v.columns_mut(0, p).copy_from(x);
    v.columns_mut(p, p).copy_from(&(-g));
    let mut core = v.tr_mul(&u) * (0.5 * tau);
    for i in 0..2 * p {
        core[(i, i)] += 1.0;
    }
    let inner = core.lu().solve(&v.tr_mul(x))?;
    Some(x - u * inner * tau)
}

/// Wen–Yin feasible Cayley descent with BB stepsizes and monotone Armijo
/// backtracking along the curve.
pub fn wen_yin_cayley(
    prob: &StiefelQuadraticProblem,
    x0: &DMatrix<f64>,
    config: &SolverConfig,
) -> Result<SolverReport<DMatrix<f64>>> {
    config.validate()?;
    prob.check_shape(x0)?;
    let mut x = StiefelPoint::new(x0.clone())?.into_matrix();
    let (mut fx, mut g) = prob.value_grad(&x)?;
    let mut lp = OuterLoop::new(config);
    let mut tau = initial_tau(prob);
    let mut backtracks = 0;
    // previous iterate and Wen–Yin direction AX for the BB update
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    loop {
        let grad = riemannian_grad(&g, &x);
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: grad.norm(),
            feasibility: stiefel_defect(&x),
            inner_iterations: backtracks,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        let ax = &g - &x * g.tr_mul(&x);
        if let Some((xp, axp)) = &prev {
            let s = &x - xp;
            let y = &ax - axp;
            let sty = s.dot(&y).abs();
            if sty > 0.0 {
                tau = (s.norm_squared() / sty).clamp(TAU_MIN, TAU_MAX);
            }
        }
        // Φ′(0) = −½‖A‖²_F, with ‖A‖²_F = 2(tr(GᵀG·XᵀX) − tr((GᵀX)²))
        let gtx = g.tr_mul(&x);
        let a_norm2 = 2.0 * ((g.tr_mul(&g) * x.tr_mul(&x)).trace() - (&gtx * &gtx).trace());
        let slope = -0.5 * a_norm2;
        backtracks = 0;
        let (xn, fxn) = loop {
            if tau < TAU_MIN {
                return Ok(lp.finish(x, SolveStatus::Stalled));
            }
            if let Some(trial) = cayley_curve(&x, &g, tau) {
                let ft = prob.value(&trial);
                if ft <= fx + config.armijo_c * tau * slope {
                    break (trial, ft);
                }
            }
            tau *= config.backtrack_beta;
            backtracks += 1;
        };
        prev = Some((x, ax));
        x = xn;
        fx = fxn;
        g = prob.apply(&x);
    }
}

/// Riemannian gradient descent with QR retraction and Armijo backtracking.
pub fn rgd_qr(
    prob: &StiefelQuadraticProblem,
    x0: &DMatrix<f64>,
    config: &SolverConfig,
) -> Result<SolverReport<DMatrix<f64>>> {
    config.validate()?;
    prob.check_shape(x0)?;
    let mut x = StiefelPoint::new(x0.clone())?.into_matrix();
    let (mut fx, mut g) = prob.value_grad(&x)?;
    let mut lp = OuterLoop::new(config);
    let mut tau = initial_tau(prob);
    let mut backtracks = 0;
    loop {
        let grad = riemannian_grad(&g, &x);
        let gn2 = grad.norm_squared();
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: gn2.sqrt(),
            feasibility: stiefel_defect(&x),
            inner_iterations: backtracks,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        // let the step grow back after successful iterations
        tau = (tau * 2.0).min(TAU_MAX);
        backtracks = 0;
        let (xn, fxn) = loop {
            if tau < TAU_MIN {
                return Ok(lp.finish(x, SolveStatus::Stalled));
            }
            let trial = qf(&(&x - &grad * tau));
            let ft = prob.value(&trial);
            if ft <= fx - config.armijo_c * tau * gn2 {
                break (trial, ft);
            }
            tau *= config.backtrack_beta;
            backtracks += 1;
        };
        x = xn;
        fx = fxn;
        g = prob.apply(&x);
        if !fx.is_finite() {
            return Err(GravidyError::Numerical {
                context: "RGD-QR",
                detail: "objective became non-finite".into(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn col(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    fn eig_problem() -> StiefelQuadraticProblem {
        StiefelQuadraticProblem::new(vec![DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 4.0,
        ]))])
        .unwrap()
    }

    #[test]
    fn cayley_curve_matches_dense_transform_and_stays_feasible() {
        let x = qf(&DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.2, 0.3, 1.0, -0.5, 0.4, 0.1, 0.9],
        ));
        let g = DMatrix::from_fn(4, 2, |i, j| (i as f64) - 0.7 * j as f64 + 0.3);
        let a = &g * x.transpose() - &x * g.transpose();
        let eye = DMatrix::<f64>::identity(4, 4);
        for tau in [0.1, 1.0, 1e3] {
            let y = cayley_curve(&x, &g, tau).unwrap();
            let dense =
                (&eye + &a * (tau / 2.0)).try_inverse().unwrap() * (&eye - &a * (tau / 2.0)) * &x;
            assert!((&y - dense).norm() <= 1e-9 * (1.0 + tau));
            assert!(stiefel_defect(&y) <= 1e-10);
        }
    }

    #[test]
    fn fixed_points() {
        let prob = eig_problem();
        let x0 = col(&[0.0, 1.0]);
        let cfg = SolverConfig::default().with_max_outer(5);
        assert_eq!(wen_yin_cayley(&prob, &x0, &cfg).unwrap().solution, x0);
        assert_eq!(rgd_qr(&prob, &x0, &cfg).unwrap().solution, x0);
    }

    #[test]
    fn eigenvector_problem() {
        let prob = eig_problem();
        let s = 0.5f64.sqrt();
        let cfg = SolverConfig::default().with_max_outer(2000);
        let wy = wen_yin_cayley(&prob, &col(&[s, s]), &cfg).unwrap();
        let rg = rgd_qr(&prob, &col(&[s, s]), &cfg).unwrap();
        assert_eq!(wy.status, SolveStatus::Converged);
        assert!((wy.final_objective() - 0.5).abs() <= 1e-10);
        assert!((wy.solution[0].abs() - 1.0).abs() <= 1e-8);
        let sign = wy.solution[0].signum() * rg.solution[0].signum();
        assert!((&wy.solution - &rg.solution * sign).norm() <= 1e-5);
        for r in [&wy, &rg] {
            assert!(r.trace.entries().iter().all(|e| e.feasibility <= 1e-10));
        }
    }
}
