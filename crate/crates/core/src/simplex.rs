//! Implicit KL-prox steps on the probability simplex.
//!
//! One outer step computes
//!
//! ```text
//! x_{k+1} = argmin_{x ∈ Δ} KL(x ‖ x_k) + η Φ(x)
//! ```
//!
//! with one of three interchangeable inner solvers: Newton on the
//! equality-constrained KKT system (Schur complement, fraction-to-the-boundary,
//! Armijo on the merit), a Hessian-free relaxed multiplicative fixed point,
//! and Gauss–Newton on reduced logits `x = softmax([v; 0])`.

use nalgebra::{DMatrix, DVector};

use crate::baselines::ProjectionOp;
use crate::config::{Metrics, OuterLoop, SolverConfig, SolverReport};
use crate::diagnostics::kkt_residual;
use crate::error::{check_dim, GravidyError, Result};
use crate::pos_box::mgn_direction;
use crate::problem::Objective;
use crate::reparam::{softmax, softmax_jacobian};

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const TANGENTIAL_REG: f64 = 1e-10;
const RELAX_FLOOR: f64 = 1e-12;
const MERIT_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimplexInner {
    #[default]
    NewtonKkt,
    FixedPoint,
    ReducedMgn,
}

/// A strictly interior simplex point with its equality multiplier estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexIterate {
    pub x: DVector<f64>,
    pub nu: f64,
}

#[derive(Debug, Clone)]
pub struct KlProxOutcome {
    pub iterate: SimplexIterate,
    pub iterations: usize,
    /// Norm of the gauge-free stationarity residual at the returned point.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Checks strict interiority and unit sum.
pub fn check_interior(x: &DVector<f64>) -> Result<()> {
    if x.is_empty() || x.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(GravidyError::InvalidInput(
            "simplex: point must be strictly positive".into(),
        ));
    }
    if (x.sum() - 1.0).abs() > 1e-10 {
        return Err(GravidyError::InvalidInput(format!(
            "simplex: coordinates sum to {}",
            x.sum()
        )));
    }
    Ok(())
}

/// `max(|1ᵀx − 1|, max(−x))`.
pub fn simplex_defect(x: &DVector<f64>) -> f64 {
    ProjectionOp::Simplex.infeasibility(x)
}

/// Continuous-time replicator velocity `−(diag(x) − xxᵀ)∇Φ(x)`.
pub fn replicator_velocity(x: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let tau = x.dot(grad);
    -x.component_mul(&grad.add_scalar(-tau))
}

fn center(v: DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.add_scalar(-mean)
}

/// The KL-prox subproblem `min_{x∈Δ} KL(x‖x_k) + ηΦ(x)`.
pub struct KlProxSubproblem<'a, O: Objective + ?Sized> {
    objective: &'a O,
    anchor: DVector<f64>,
    log_anchor: DVector<f64>,
    eta: f64,
}

impl<'a, O: Objective + ?Sized> KlProxSubproblem<'a, O> {
    pub fn new(objective: &'a O, anchor: DVector<f64>, eta: f64) -> Result<Self> {
        check_dim(objective.dim(), anchor.len(), "KL-prox: len(x_k)")?;
        check_interior(&anchor)?;
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "KL-prox: eta must be >= 0".into(),
            ));
        }
        let log_anchor = anchor.map(f64::ln);
        Ok(Self {
            objective,
            anchor,
            log_anchor,
            eta,
        })
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `R(x) = KL(x‖x_k) + ηΦ(x)`.
    pub fn merit(&self, x: &DVector<f64>) -> f64 {
        let kl: f64 = x
            .iter()
            .zip(self.log_anchor.iter())
            .map(|(xi, la)| xi * (xi.ln() - la))
            .sum();
        kl + self.eta * self.objective.value(x)
    }

    /// `log x − log x_k + η∇Φ(x)`.
    pub fn stationarity(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(f64::ln) - &self.log_anchor + self.objective.gradient(x) * self.eta
    }

    /// Stationarity vector with its component along `1` removed.
    pub fn gauge_free_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        center(self.stationarity(x))
    }
}

fn renormalize(x: &mut DVector<f64>) {
    let s = x.sum();
    *x /= s;
}

/// Newton–KKT inner solver.
pub fn klprox_newton_kkt<O: Objective + ?Sized>(
    sub: &KlProxSubproblem<'_, O>,
    config: &SolverConfig,
) -> Result<KlProxOutcome> {
    let n = sub.anchor.len();
    let ones = DVector::from_element(n, 1.0);
    let mut x = sub.anchor.clone();
    let mut nu = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_inner {
        iterations += 1;
        let g = sub.stationarity(&x);
        let h = sub
            .objective
            .hessian(&x)
            .ok_or(GravidyError::MissingHessian("Newton-KKT"))?;
        let mut k = h * sub.eta;
        for i in 0..n {
            k[(i, i)] += 1.0 / x[i];
        }
        let chol = match k.clone().cholesky() {
            Some(c) => c,
            None => {
                let reg = (DMatrix::identity(n, n) - &ones * ones.transpose() / n as f64)
                    * TANGENTIAL_REG;
                (k + reg)
                    .cholesky()
                    .ok_or_else(|| GravidyError::Numerical {
                        context: "Newton-KKT",
                        detail: "Cholesky of K failed after tangential regularization".into(),
                    })?
            }
        };
        let y = chol.solve(&g);
        let z = chol.solve(&ones);
        let dnu = -y.sum() / z.sum();
        let dx = -(&y + &z * dnu);

        let mut alpha: f64 = 1.0;
        for i in 0..n {
            if dx[i] < 0.0 {
                alpha = alpha.min(-FRACTION_TO_BOUNDARY * x[i] / dx[i] * FRACTION_TO_BOUNDARY);
            }
        }
        let step_l1 = dx.lp_norm(1);
        if step_l1 <= config.inner_tol {
            x += &dx * alpha;
            nu += alpha * dnu;
            renormalize(&mut x);
            converged = true;
            break;
        }
        let r0 = sub.merit(&x);
        let slope = g.dot(&dx);
        let slack = MERIT_SLACK * (1.0 + r0.abs());
        let mut accepted = false;
        while alpha > 1e-16 {
            let trial = &x + &dx * alpha;
            if sub.merit(&trial) <= r0 + config.armijo_c * alpha * slope + slack {
                accepted = true;
                break;
            }
            alpha *= config.backtrack_beta;
        }
        if !accepted {
            break;
        }
        x += &dx * alpha;
        nu += alpha * dnu;
        renormalize(&mut x);
    }
    let residual_norm = sub.gauge_free_residual(&x).norm();
    Ok(KlProxOutcome {
        iterate: SimplexIterate { x, nu },
        iterations,
        residual_norm,
        converged: converged || residual_norm <= config.inner_tol,
    })
}

/// Hessian-free relaxed fixed point
/// `x⁺ = (1−λ)x + λ·normalize(x_k ⊙ exp(−η∇Φ(x)))`, halving `λ` whenever the
/// merit would increase.
pub fn kl_fixed_point<O: Objective + ?Sized>(
    sub: &KlProxSubproblem<'_, O>,
    relax: f64,
    config: &SolverConfig,
) -> Result<KlProxOutcome> {
    if !(relax > 0.0 && relax <= 1.0) {
        return Err(GravidyError::InvalidInput(
            "fixed point: relaxation must lie in (0, 1]".into(),
        ));
    }
    let mut lambda = relax;
    let mut x = sub.anchor.clone();
    let mut r_norm = sub.gauge_free_residual(&x).norm();
    let mut merit = sub.merit(&x);
    let mut iterations = 0;
    if r_norm <= config.inner_tol {
        return Ok(KlProxOutcome {
            iterate: SimplexIterate { x, nu: 0.0 },
            iterations,
            residual_norm: r_norm,
            converged: true,
        });
    }
    while iterations < config.max_inner {
        iterations += 1;
        let g = sub.objective.gradient(&x);
        // log-domain evaluation of x_k ⊙ exp(−ηg), normalized
        let logits = &sub.log_anchor - g * sub.eta;
        let y = softmax(&logits);
        let mut trial = &x * (1.0 - lambda) + y * lambda;
        renormalize(&mut trial);
        let r_trial = sub.gauge_free_residual(&trial).norm();
        if r_trial <= config.inner_tol {
            x = trial;
            r_norm = r_trial;
            break;
        }
        let m_trial = sub.merit(&trial);
        if m_trial <= merit + MERIT_SLACK * (1.0 + merit.abs()) {
            x = trial;
            merit = m_trial;
            r_norm = r_trial;
        } else {
            lambda /= 2.0;
            if lambda < RELAX_FLOOR {
                break;
            }
        }
    }
    // ν from the mean of the stationarity vector
    let nu = -sub.stationarity(&x).mean();
    Ok(KlProxOutcome {
        iterate: SimplexIterate { x, nu },
        iterations,
        residual_norm: r_norm,
        converged: r_norm <= config.inner_tol,
    })
}

/// Reduced logits `v_i = log x_i − log x_n` of an interior point.
pub fn reduced_logits(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let ln_last = x[n - 1].ln();
    DVector::from_fn(n - 1, |i, _| x[i].ln() - ln_last)
}

/// `softmax([v; 0])`.
pub fn logits_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u = v.clone().insert_row(v.len(), 0.0);
    u = softmax(&u);
    u
}

#[derive(Debug, Clone)]
pub struct ReducedLogitOutcome {
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Residual of the implicit step in reduced logits,
/// `F(v) = v − v_k + η(∇Φ(x)_{1:n−1} − ∇_nΦ(x)·1)` with `x = softmax([v;0])`.
pub fn reduced_logit_residual<O: Objective + ?Sized>(
    objective: &O,
    v: &DVector<f64>,
    v_k: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    let m = v.len();
    let x = logits_to_simplex(v);
    let g = objective.gradient(&x);
    let gn = g[m];
    v - v_k + DVector::from_fn(m, |i, _| g[i] - gn) * eta
}

/// Modified Gauss–Newton on the reduced-logit residual, started at `v_k`.
pub fn reduced_logit_mgn<O: Objective + ?Sized>(
    objective: &O,
    v_k: &DVector<f64>,
    eta: f64,
    config: &SolverConfig,
) -> Result<ReducedLogitOutcome> {
    check_dim(
        objective.dim(),
        v_k.len() + 1,
        "reduced logits: len(v_k) + 1",
    )?;
    if !(eta >= 0.0 && eta.is_finite()) || v_k.iter().any(|t| !t.is_finite()) {
        return Err(GravidyError::InvalidInput(
            "reduced logits: bad eta or v_k".into(),
        ));
    }
    let m = v_k.len();
    let mut v = v_k.clone();
    let mut f = reduced_logit_residual(objective, &v, v_k, eta);
    let mut nf = f.norm();
    let mut damping: Option<f64> = None;
    let mut iterations = 0;
    while iterations < config.max_inner {
        if nf <= config.inner_tol {
            break;
        }
        iterations += 1;
        let x = logits_to_simplex(&v);
        let h = objective
            .hessian(&x)
            .ok_or(GravidyError::MissingHessian("reduced-logit MGN"))?;
        let hj = h * softmax_jacobian(&x).columns(0, m);
        let mut j = DMatrix::from_fn(m, m, |r, c| eta * (hj[(r, c)] - hj[(m, c)]));
        for i in 0..m {
            j[(i, i)] += 1.0;
        }
        let mu = *damping.get_or_insert_with(|| {
            config
                .lm_damping_init
                .unwrap_or_else(|| 1e-3 * (1.0 + j.tr_mul(&f).amax()))
        });
        let dv = mgn_direction(&j, &f, mu)?;
        let trial = &v + dv;
        let ft = reduced_logit_residual(objective, &trial, v_k, eta);
        let nft = ft.norm();
        if nft < nf && trial.iter().all(|t| t.is_finite()) {
            v = trial;
            f = ft;
            nf = nft;
            damping = Some(mu / 2.0);
        } else {
            damping = Some(mu * 2.0);
            if mu > 1e30 {
                break;
            }
        }
    }
    let x = logits_to_simplex(&v);
    Ok(ReducedLogitOutcome {
        v,
        x,
        iterations,
        residual_norm: nf,
        converged: nf <= config.inner_tol,
    })
}

/// Inner solver settings for [`solve_simplex`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub inner: SimplexInner,
    /// Initial relaxation of the fixed-point solver.
    pub relax: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            inner: SimplexInner::NewtonKkt,
            relax: 1.0,
        }
    }
}

impl From<SimplexInner> for SimplexOptions {
    fn from(inner: SimplexInner) -> Self {
        Self {
            inner,
            ..Default::default()
        }
    }
}

/// GRAVIDY-Δ: repeated KL-prox steps from an interior `x₀`.
pub fn solve_simplex<O: Objective + ?Sized>(
    prob: &O,
    x0: &DVector<f64>,
    config: &SolverConfig,
    options: impl Into<SimplexOptions>,
) -> Result<SolverReport<DVector<f64>>> {
    let options = options.into();
    config.validate()?;
    check_dim(prob.dim(), x0.len(), "len(x0)")?;
    check_interior(x0)?;
    if x0.len() < 2 && options.inner == SimplexInner::ReducedMgn {
        return Err(GravidyError::InvalidInput(
            "reduced logits need n >= 2".into(),
        ));
    }
    let proj = ProjectionOp::Simplex;
    let mut x = x0.clone();
    let mut lp = OuterLoop::new(config);
    let mut inner_iterations = 0;
    loop {
        let (value, grad) = prob.value_grad(&x);
        if let Some(status) = lp.record(Metrics {
            objective: value,
            kkt: kkt_residual(&x, &grad, &proj),
            feasibility: simplex_defect(&x),
            inner_iterations,
            at_face: 0,
        }) {
            return Ok(lp.finish(x, status));
        }
        let (next, iters) = match options.inner {
            SimplexInner::NewtonKkt => {
                let sub = KlProxSubproblem::new(prob, x.clone(), config.eta)?;
                let out = klprox_newton_kkt(&sub, config)?;
                (out.iterate.x, out.iterations)
            }
            SimplexInner::FixedPoint => {
                let sub = KlProxSubproblem::new(prob, x.clone(), config.eta)?;
                let out = kl_fixed_point(&sub, options.relax, config)?;
                (out.iterate.x, out.iterations)
            }
            SimplexInner::ReducedMgn => {
                let out = reduced_logit_mgn(prob, &reduced_logits(&x), config.eta, config)?;
                (out.x, out.iterations)
            }
        };
        inner_iterations = iters;
        // keep strict interiority representable
        x = next.map(|t| t.max(f64::MIN_POSITIVE));
        renormalize(&mut x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolveStatus;
    use crate::problem::{LeastSquaresProblem, LinearObjective};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            max_inner: 200,
            ..Default::default()
        }
    }

    fn small_ls() -> LeastSquaresProblem {
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 0.2, -0.5, 0.3, 1.1, 0.4, -0.2, 0.7, 0.9, 0.5, -0.3, 0.2,
            ],
        );
        LeastSquaresProblem::new(a, v(&[0.3, -0.1, 0.8, 0.2])).unwrap()
    }

    #[test]
    fn zero_objective_keeps_anchor() {
        let phi = LinearObjective::zero(3);
        let xk = v(&[0.2, 0.3, 0.5]);
        let sub = KlProxSubproblem::new(&phi, xk.clone(), 10.0).unwrap();
        let out = klprox_newton_kkt(&sub, &tight()).unwrap();
        assert_eq!(out.iterate.x, xk);
        let out = kl_fixed_point(&sub, 1.0, &tight()).unwrap();
        assert_eq!(out.iterate.x, xk);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn uniform_gradient_keeps_anchor() {
        let phi = LinearObjective::new(DVector::from_element(3, 2.5));
        let xk = v(&[0.2, 0.3, 0.5]);
        let sub = KlProxSubproblem::new(&phi, xk.clone(), 4.0).unwrap();
        let out = kl_fixed_point(&sub, 1.0, &tight()).unwrap();
        assert_relative_eq!(out.iterate.x, xk, epsilon = 1e-15);
    }

    #[test]
    fn large_eta_limit_matches_grid_search() {
        let c = v(&[0.9, 0.1]);
        let phi = LeastSquaresProblem::new(DMatrix::identity(2, 2), c).unwrap();
        let eta = 1e6;
        let sub = KlProxSubproblem::new(&phi, v(&[0.5, 0.5]), eta).unwrap();
        // grid-search oracle on R over x₁ ∈ (0,1)
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..1_000_000 {
            let t = i as f64 / 1_000_000.0;
            let r = sub.merit(&v(&[t, 1.0 - t]));
            if r < best.0 {
                best = (r, t);
            }
        }
        let out = klprox_newton_kkt(&sub, &tight()).unwrap();
        assert!((out.iterate.x[0] - best.1).abs() <= 1e-4);
        assert!((out.iterate.x[0] - 0.9).abs() <= 1e-4);
    }

    #[test]
    fn three_inner_solvers_agree() {
        let p = small_ls();
        let xk = v(&[0.2, 0.5, 0.3]);
        let cfg = SolverConfig {
            max_inner: 100_000,
            ..Default::default()
        };
        let sub = KlProxSubproblem::new(&p, xk.clone(), 50.0).unwrap();
        let newton = klprox_newton_kkt(&sub, &cfg).unwrap();
        assert!(newton.converged);
        assert!(newton.residual_norm <= 10.0 * cfg.inner_tol);
        let fp = kl_fixed_point(&sub, 1.0, &cfg).unwrap();
        assert!(fp.converged, "fixed point residual {}", fp.residual_norm);
        assert!((&newton.iterate.x - &fp.iterate.x).lp_norm(1) <= 1e-6);
        let mgn = reduced_logit_mgn(&p, &reduced_logits(&xk), 50.0, &cfg).unwrap();
        assert!(mgn.converged);
        assert!((&newton.iterate.x - &mgn.x).lp_norm(1) <= 1e-5);
    }

    #[test]
    fn reduced_logits_zero_eta_and_symmetry() {
        let p = small_ls();
        let vk = v(&[0.3, -0.2]);
        let out = reduced_logit_mgn(&p, &vk, 0.0, &tight()).unwrap();
        assert_eq!(out.v, vk);
        // swap-symmetric Φ on Δ₂
        let sym = LeastSquaresProblem::new(DMatrix::identity(2, 2), v(&[0.7, 0.7])).unwrap();
        let out = reduced_logit_mgn(&sym, &v(&[0.0]), 30.0, &tight()).unwrap();
        assert_eq!(out.v, v(&[0.0]));
        assert_eq!(out.x, v(&[0.5, 0.5]));
    }

    #[test]
    fn replicator_velocity_is_tangent() {
        let x = v(&[0.1, 0.2, 0.3, 0.4]);
        let g = v(&[3.0, -1.0, 0.5, 2.0]);
        assert!(replicator_velocity(&x, &g).sum().abs() <= 1e-12);
    }

    #[test]
    fn kkt_matrix_is_spd_at_interior_points() {
        let p = small_ls();
        let x = v(&[0.05, 0.9, 0.05]);
        let mut k = p.gram() * 100.0;
        for i in 0..3 {
            k[(i, i)] += 1.0 / x[i];
        }
        assert!(k.cholesky().is_some());
    }

    #[test]
    fn interior_optimum_is_recovered() {
        let c = v(&[0.2, 0.3, 0.5]);
        let p = LeastSquaresProblem::new(DMatrix::identity(3, 3), c.clone()).unwrap();
        for inner in [
            SimplexInner::NewtonKkt,
            SimplexInner::FixedPoint,
            SimplexInner::ReducedMgn,
        ] {
            let cfg = SolverConfig {
                max_inner: 10_000,
                ..Default::default()
            };
            let r = solve_simplex(&p, &v(&[0.6, 0.2, 0.2]), &cfg, inner).unwrap();
            assert_eq!(r.status, SolveStatus::Converged, "{inner:?}");
            assert!((r.solution.clone() - &c).amax() <= 1e-6, "{inner:?}");
            for e in r.trace.entries() {
                assert!(e.feasibility <= 1e-12);
            }
        }
    }

    #[test]
    fn linear_objective_concentrates_on_cheapest_vertex() {
        let p = LinearObjective::new(v(&[0.4, -0.3, 0.1]));
        let cfg = SolverConfig::default().with_eta(50.0).with_max_outer(20);
        let r = solve_simplex(&p, &v(&[1.0 / 3.0; 3]), &cfg, SimplexInner::NewtonKkt).unwrap();
        assert!(r.solution[1] >= 1.0 - 1e-3);
        assert!(r.solution.iter().all(|t| *t > 0.0));
    }

    #[test]
    fn rejects_boundary_start() {
        let p = small_ls();
        assert!(solve_simplex(
            &p,
            &v(&[0.0, 0.5, 0.5]),
            &SolverConfig::default(),
            SimplexInner::NewtonKkt
        )
        .is_err());
        assert!(solve_simplex(
            &p,
            &v(&[0.3, 0.3, 0.3]),
            &SolverConfig::default(),
            SimplexInner::NewtonKkt
        )
        .is_err());
    }
}
