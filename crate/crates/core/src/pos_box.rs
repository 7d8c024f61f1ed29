//! Backward Euler in reparameterized coordinates for the nonnegative orthant
//! (`x = exp(u)`) and the box (`x = ℓ + (b − ℓ)σ(w)`).
//!
//! Each outer step solves
//!
//! ```text
//! F(ζ) = ζ − ζ_k + η ∇Φ(g(ζ)) = 0,    J_F(ζ) = I + η ∇²Φ(g(ζ)) diag(g′(ζ))
//! ```
//!
//! by a Levenberg–Marquardt damped Gauss–Newton loop (default) or by damped
//! Newton. Primal iterates are `x = g(ζ)` and are therefore feasible at every
//! inner and outer iteration.

use nalgebra::{DMatrix, DVector};

use crate::baselines::ProjectionOp;
use crate::config::{Metrics, OuterLoop, SolverConfig, SolverReport};
use crate::diagnostics::kkt_residual;
use crate::error::{check_dim, GravidyError, Result};
use crate::problem::Objective;
use crate::reparam::{MapDerivative, ReparamMap, CLAMP};

/// Inner root finder for the implicit residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VectorInner {
    /// Modified Gauss–Newton with LM damping.
    #[default]
    Mgn,
    /// Newton on `J_F h = −F` with Armijo backtracking on `‖F‖²`.
    Newton,
}

/// One implicit step: anchor `ζ_k`, stepsize `η`, objective and map.
pub struct ImplicitResidualState<'a, O: Objective + ?Sized> {
    objective: &'a O,
    map: &'a ReparamMap,
    anchor: DVector<f64>,
    eta: f64,
}

impl<'a, O: Objective + ?Sized> ImplicitResidualState<'a, O> {
    pub fn new(
        objective: &'a O,
        map: &'a ReparamMap,
        anchor: DVector<f64>,
        eta: f64,
    ) -> Result<Self> {
        check_dim(
            objective.dim(),
            anchor.len(),
            "implicit residual: len(anchor)",
        )?;
        if matches!(map, ReparamMap::Softmax) {
            return Err(GravidyError::InvalidInput(
                "implicit residual: componentwise map required".into(),
            ));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "implicit residual: eta must be >= 0".into(),
            ));
        }
        if anchor.iter().any(|v| !v.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "implicit residual: non-finite anchor".into(),
            ));
        }
        Ok(Self {
            objective,
            map,
            anchor,
            eta,
        })
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn raw_residual(&self, zeta: &DVector<f64>) -> DVector<f64> {
        let x = self.map.apply_unchecked(zeta);
        zeta - &self.anchor + self.objective.gradient(&x) * self.eta
    }

    /// `F(ζ)` and `‖F(ζ)‖₂`. Components of coordinates pinned at the clamp
    /// (see [`pinned`](Self::pinned)) are zero.
    pub fn residual(&self, zeta: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut f = self.raw_residual(zeta);
        for i in 0..f.len() {
            if pinned_at(zeta[i], f[i]) {
                f[i] = 0.0;
            }
        }
        let n = f.norm();
        (f, n)
    }

    /// Coordinates at `±CLAMP` whose residual pushes them further out.
    pub fn pinned(&self, zeta: &DVector<f64>) -> Vec<bool> {
        let f = self.raw_residual(zeta);
        zeta.iter()
            .zip(f.iter())
            .map(|(z, r)| pinned_at(*z, *r))
            .collect()
    }

    /// `J_F(ζ) = I + η H diag(g′(ζ))`, with unit rows for pinned coordinates.
    pub fn jacobian(&self, zeta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.map.apply_unchecked(zeta);
        let h = self
            .objective
            .hessian(&x)
            .ok_or(GravidyError::MissingHessian("implicit residual Jacobian"))?;
        let d = match self.map.derivative_unchecked(zeta) {
            MapDerivative::Diagonal(d) => d,
            MapDerivative::Full(_) => unreachable!("componentwise map checked in new"),
        };
        let n = zeta.len();
        let mut j = h;
        for c in 0..n {
            let s = self.eta * d[c];
            j.column_mut(c).scale_mut(s);
        }
        for i in 0..n {
            j[(i, i)] += 1.0;
        }
        for (i, p) in self.pinned(zeta).into_iter().enumerate() {
            if p {
                j.row_mut(i).fill(0.0);
                j[(i, i)] = 1.0;
            }
        }
        Ok(j)
    }
}

fn pinned_at(zeta: f64, f: f64) -> bool {
    (zeta <= -CLAMP && f > 0.0) || (zeta >= CLAMP && f < 0.0)
}

/// Result of an inner solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub zeta: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

fn clamp_vec(z: DVector<f64>) -> DVector<f64> {
    z.map(|t| t.clamp(-CLAMP, CLAMP))
}

/// Solves `(JᵀJ + M I) h = −JᵀF` by Cholesky.
pub fn mgn_direction(j: &DMatrix<f64>, f: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    let n = j.ncols();
    let mut normal = j.tr_mul(j);
    for i in 0..n {
        normal[(i, i)] += damping;
    }
    let rhs = -j.tr_mul(f);
    let chol = normal.cholesky().ok_or_else(|| GravidyError::Numerical {
        context: "MGN normal equations",
        detail: format!("Cholesky failed with damping {damping:e}"),
    })?;
    Ok(chol.solve(&rhs))
}

fn initial_damping(config: &SolverConfig, j: &DMatrix<f64>, f: &DVector<f64>) -> f64 {
    config
        .lm_damping_init
        .unwrap_or_else(|| 1e-3 * (1.0 + j.tr_mul(f).amax()))
}

/// Modified Gauss–Newton on `F(ζ) = 0`, started at the anchor.
///
/// A trial step is accepted only if it strictly reduces `‖F‖`; the damping
/// is halved on acceptance and doubled on rejection.
pub fn mgn_inner_solve<O: Objective + ?Sized>(
    state: &ImplicitResidualState<'_, O>,
    config: &SolverConfig,
) -> Result<InnerOutcome> {
    let mut zeta = state.anchor.clone();
    let (mut f, mut nf) = state.residual(&zeta);
    let mut damping: Option<f64> = None;
    let mut iterations = 0;
    while iterations < config.max_inner {
        if nf <= config.inner_tol {
            break;
        }
        iterations += 1;
        let j = state.jacobian(&zeta)?;
        let m = *damping.get_or_insert_with(|| initial_damping(config, &j, &f));
        let h = mgn_direction(&j, &f, m)?;
        let trial = clamp_vec(&zeta + h);
        let (ft, nft) = state.residual(&trial);
        if nft < nf {
            zeta = trial;
            f = ft;
            nf = nft;
            damping = Some(m / 2.0);
        } else {
            damping = Some(m * 2.0);
            if m > 1e30 {
                break;
            }
        }
    }
    Ok(InnerOutcome {
        zeta,
        iterations,
        residual_norm: nf,
        converged: nf <= config.inner_tol,
    })
}

/// Damped Newton on `F(ζ) = 0`, started at the anchor. A singular Jacobian
/// falls back to one MGN step with damping `1e-6`.
pub fn newton_inner_solve<O: Objective + ?Sized>(
    state: &ImplicitResidualState<'_, O>,
    config: &SolverConfig,
) -> Result<InnerOutcome> {
    let mut zeta = state.anchor.clone();
    let (mut f, mut nf) = state.residual(&zeta);
    let mut iterations = 0;
    while iterations < config.max_inner {
        if nf <= config.inner_tol {
            break;
        }
        iterations += 1;
        let j = state.jacobian(&zeta)?;
        let h = match j.clone().lu().solve(&(-&f)) {
            Some(h) if h.iter().all(|v| v.is_finite()) => h,
            _ => mgn_direction(&j, &f, 1e-6)?,
        };
        let merit = nf * nf;
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial = clamp_vec(&zeta + &h * t);
            let (ft, nft) = state.residual(&trial);
            if nft * nft <= (1.0 - 2.0 * config.armijo_c * t) * merit {
                accepted = Some((trial, ft, nft));
                break;
            }
            t *= config.backtrack_beta;
        }
        match accepted {
            Some((z, ft, nft)) => {
                zeta = z;
                f = ft;
                nf = nft;
            }
            None => break,
        }
    }
    Ok(InnerOutcome {
        zeta,
        iterations,
        residual_norm: nf,
        converged: nf <= config.inner_tol,
    })
}

fn run_inner<O: Objective + ?Sized>(
    state: &ImplicitResidualState<'_, O>,
    config: &SolverConfig,
    inner: VectorInner,
) -> Result<InnerOutcome> {
    match inner {
        VectorInner::Mgn => mgn_inner_solve(state, config),
        VectorInner::Newton => newton_inner_solve(state, config),
    }
}

fn solve_reparameterized<O: Objective + ?Sized>(
    prob: &O,
    map: ReparamMap,
    proj: ProjectionOp,
    x0: &DVector<f64>,
    config: &SolverConfig,
    inner: VectorInner,
) -> Result<SolverReport<DVector<f64>>> {
    config.validate()?;
    check_dim(prob.dim(), x0.len(), "len(x0)")?;
    let mut zeta = map.inverse(x0)?;
    let mut x = x0.clone();
    let mut lp = OuterLoop::new(config);
    let mut inner_iterations = 0;
    loop {
        let (value, grad) = prob.value_grad(&x);
        let at_face = zeta.iter().filter(|t| t.abs() >= CLAMP).count();
        if let Some(status) = lp.record(Metrics {
            objective: value,
            kkt: kkt_residual(&x, &grad, &proj),
            feasibility: proj.infeasibility(&x),
            inner_iterations,
            at_face,
        }) {
            return Ok(lp.finish(x, status));
        }
        let state = ImplicitResidualState::new(prob, &map, zeta.clone(), config.eta)?;
        let out = run_inner(&state, config, inner)?;
        inner_iterations = out.iterations;
        zeta = out.zeta;
        x = map.apply_unchecked(&zeta);
    }
}

/// GRAVIDY-Pos: implicit Euler on the orthant through `x = exp(u)`.
pub fn solve_pos<O: Objective + ?Sized>(
    prob: &O,
    x0: &DVector<f64>,
    config: &SolverConfig,
    inner: VectorInner,
) -> Result<SolverReport<DVector<f64>>> {
    solve_pos_with_map(prob, x0, config, inner, ReparamMap::Exp)
}

/// GRAVIDY-Pos with an explicit positivity map (`Exp` or `LogCosh`).
pub fn solve_pos_with_map<O: Objective + ?Sized>(
    prob: &O,
    x0: &DVector<f64>,
    config: &SolverConfig,
    inner: VectorInner,
    map: ReparamMap,
) -> Result<SolverReport<DVector<f64>>> {
    if !matches!(map, ReparamMap::Exp | ReparamMap::LogCosh) {
        return Err(GravidyError::InvalidInput(
            "solve_pos: positivity map must be exp or logcosh".into(),
        ));
    }
    if x0.iter().any(|v| !(*v > 0.0)) {
        return Err(GravidyError::InvalidInput(
            "solve_pos: x0 must be strictly positive".into(),
        ));
    }
    solve_reparameterized(prob, map, ProjectionOp::Orthant, x0, config, inner)
}

/// GRAVIDY-Box: implicit Euler on `[ℓ, b]` through the scaled sigmoid.
pub fn solve_box<O: Objective + ?Sized>(
    prob: &O,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x0: &DVector<f64>,
    config: &SolverConfig,
    inner: VectorInner,
) -> Result<SolverReport<DVector<f64>>> {
    let map = ReparamMap::sigmoid_box(lower.clone(), upper.clone())?;
    let proj = ProjectionOp::boxed(lower.clone(), upper.clone())?;
    solve_reparameterized(prob, map, proj, x0, config, inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolveStatus;
    use crate::problem::LeastSquaresProblem;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    fn scalar_ls(a: f64, b: f64) -> LeastSquaresProblem {
        LeastSquaresProblem::new(DMatrix::from_element(1, 1, a), v(&[b])).unwrap()
    }

    /// Root of `u + η(a²eᵘ − ab) = 0` on `[-10, 10]` by bisection.
    fn bisection_root(a: f64, b: f64, eta: f64) -> f64 {
        let f = |u: f64| u + eta * (a * a * u.exp() - a * b);
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn clamped_coordinate_pushed_outward_is_pinned() {
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), v(&[-2.0, 0.5])).unwrap();
        let map = ReparamMap::Exp;
        let s = ImplicitResidualState::new(&p, &map, v(&[-CLAMP, 0.0]), 100.0).unwrap();
        assert_eq!(s.pinned(&v(&[-CLAMP, 0.0])), vec![true, false]);
        let (f, _) = s.residual(&v(&[-CLAMP, 0.5f64.ln()]));
        assert_eq!(f[0], 0.0);
        let j = s.jacobian(&v(&[-CLAMP, 0.0])).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        let out = mgn_inner_solve(&s, &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.zeta[0], -CLAMP);
        assert!((out.zeta[1].exp() - bisection_root(1.0, 0.5, 100.0).exp()).abs() <= 1e-9);
    }

    #[test]
    fn residual_examples() {
        let p = scalar_ls(1.0, 2.0);
        let map = ReparamMap::Exp;
        let s = ImplicitResidualState::new(&p, &map, v(&[0.3]), 0.0).unwrap();
        let (f, _) = s.residual(&v(&[1.1]));
        assert_relative_eq!(f[0], 0.8, epsilon = 1e-15);

        let s = ImplicitResidualState::new(&p, &map, v(&[0.0]), 7.0).unwrap();
        let (f, _) = s.residual(&v(&[2f64.ln()]));
        assert_relative_eq!(f[0], 2f64.ln(), epsilon = 1e-14);
        let (f, n) = s.residual(&v(&[0.0]));
        assert_eq!(f[0], -7.0);
        assert_eq!(n, 7.0);
    }

    #[test]
    fn zero_residual_on_entry_takes_no_steps() {
        let p = scalar_ls(1.0, 2.0);
        let map = ReparamMap::Exp;
        // x_k = 2 is the minimizer, so F(ζ_k) = 0
        let s = ImplicitResidualState::new(&p, &map, v(&[2f64.ln()]), 100.0).unwrap();
        let cfg = SolverConfig::default();
        for out in [
            mgn_inner_solve(&s, &cfg).unwrap(),
            newton_inner_solve(&s, &cfg).unwrap(),
        ] {
            assert_eq!(out.iterations, 0);
            assert_eq!(out.zeta, v(&[2f64.ln()]));
        }
    }

    #[test]
    fn inner_roots_match_bisection_oracle() {
        let p = scalar_ls(1.0, 2.0);
        let map = ReparamMap::Exp;
        let s = ImplicitResidualState::new(&p, &map, v(&[0.0]), 100.0).unwrap();
        let root = bisection_root(1.0, 2.0, 100.0);
        let cfg = SolverConfig::default();
        for out in [
            mgn_inner_solve(&s, &cfg).unwrap(),
            newton_inner_solve(&s, &cfg).unwrap(),
        ] {
            assert!(out.converged);
            assert!((out.zeta[0].exp() - root.exp()).abs() <= 1e-8);
        }
    }

    #[test]
    fn tiny_damping_recovers_gauss_newton() {
        let j = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, -0.1, 1.5, 0.2, 0.4, 0.0, 3.0]);
        let f = v(&[1.0, -2.0, 0.5]);
        let h = mgn_direction(&j, &f, 1e-16).unwrap();
        let gn = j.tr_mul(&j).lu().solve(&(-j.tr_mul(&f))).unwrap();
        assert!((&h - &gn).norm() / gn.norm() <= 1e-8);
    }

    #[test]
    fn newton_and_mgn_agree_on_diagonal_problem() {
        let n = 10;
        let a = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.5 + 0.25 * i as f64));
        let b = DVector::from_fn(n, |i, _| {
            if i % 3 == 0 {
                -1.0
            } else {
                1.0 + 0.1 * i as f64
            }
        });
        let p = LeastSquaresProblem::new(a, b).unwrap();
        let map = ReparamMap::Exp;
        let cfg = SolverConfig::default();
        let s = ImplicitResidualState::new(&p, &map, DVector::zeros(n), 100.0).unwrap();
        let newton = newton_inner_solve(&s, &cfg).unwrap();
        let mgn = mgn_inner_solve(&s, &cfg).unwrap();
        assert!(newton.converged && mgn.converged);
        assert!(newton.residual_norm <= 1e-10);
        let xn = map.apply(&newton.zeta).unwrap();
        let xm = map.apply(&mgn.zeta).unwrap();
        assert!((xn - xm).amax() <= 1e-8);
    }

    #[test]
    fn newton_is_fast_near_the_root() {
        // warm anchor: several outer steps in, the implicit step is a small correction
        let n = 10;
        let a = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.5 + 0.25 * i as f64));
        let b = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
        let p = LeastSquaresProblem::new(a, b).unwrap();
        let cfg = SolverConfig::default().with_max_outer(3);
        let warm = solve_pos(&p, &DVector::from_element(n, 1.0), &cfg, VectorInner::Mgn).unwrap();
        let map = ReparamMap::Exp;
        let anchor = map.inverse(&warm.solution).unwrap();
        let s = ImplicitResidualState::new(&p, &map, anchor, 100.0).unwrap();
        let out = newton_inner_solve(&s, &cfg).unwrap();
        assert!(out.residual_norm <= 1e-10);
        assert!(out.iterations <= 3, "{} iterations", out.iterations);
    }

    #[test]
    fn jacobian_spectrum_is_shifted_identity() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]);
        let p = LeastSquaresProblem::new(a, v(&[1.0, 1.0, 1.0])).unwrap();
        let map = ReparamMap::Exp;
        let s = ImplicitResidualState::new(&p, &map, v(&[0.0, -3.0, 1.0]), 50.0).unwrap();
        let j = s.jacobian(&v(&[0.5, -2.0, 0.1])).unwrap();
        for ev in j.complex_eigenvalues().iter() {
            assert!(ev.re >= 1.0 - 1e-8, "{ev}");
        }
    }

    #[test]
    fn scalar_nnls_converges_to_positive_root() {
        let p = scalar_ls(1.0, 2.0);
        let cfg = SolverConfig::default();
        let r = solve_pos(&p, &v(&[1.0]), &cfg, VectorInner::Mgn).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.solution[0] - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn scalar_nnls_goes_to_face() {
        let p = scalar_ls(1.0, -2.0);
        let cfg = SolverConfig::default();
        let r = solve_pos(&p, &v(&[1.0]), &cfg, VectorInner::Newton).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.solution[0] > 0.0 && r.solution[0] <= 1e-8);
        assert!(p.gradient(&r.solution)[0] >= 2.0 - 1e-8);
    }

    #[test]
    fn degenerate_zero_column_is_stationary() {
        let p = scalar_ls(0.0, 3.0);
        let r = solve_pos(&p, &v(&[0.7]), &SolverConfig::default(), VectorInner::Mgn).unwrap();
        assert_eq!(r.iterations(), 0);
        assert_eq!(r.final_kkt(), 0.0);
        assert_eq!(r.solution, v(&[0.7]));
    }

    #[test]
    fn logcosh_map_also_solves_scalar_nnls() {
        let p = scalar_ls(1.0, 2.0);
        let r = solve_pos_with_map(
            &p,
            &v(&[1.0]),
            &SolverConfig::default(),
            VectorInner::Mgn,
            ReparamMap::LogCosh,
        )
        .unwrap();
        assert!((r.solution[0] - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn box_interior_and_face_optima() {
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), v(&[0.5, 0.5])).unwrap();
        let (lo, hi) = (DVector::zeros(2), DVector::from_element(2, 1.0));
        let cfg = SolverConfig::default();
        let r = solve_box(&p, &lo, &hi, &v(&[0.2, 0.9]), &cfg, VectorInner::Mgn).unwrap();
        assert!((r.solution - v(&[0.5, 0.5])).amax() <= 1e-6);

        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), v(&[2.0, 2.0])).unwrap();
        let r = solve_box(&p, &lo, &hi, &v(&[0.5, 0.5]), &cfg, VectorInner::Newton).unwrap();
        assert!((r.solution.clone() - v(&[1.0, 1.0])).amax() <= 1e-4);
        assert!(r.solution.iter().all(|t| *t < 1.0));
    }

    #[test]
    fn box_sliver_stays_feasible() {
        let p = LeastSquaresProblem::new(DMatrix::identity(2, 2), v(&[3.0, -3.0])).unwrap();
        let hi = DVector::from_element(2, 1.0);
        let lo = hi.map(|t| t - 1e-12);
        let x0 = hi.map(|t| t - 5e-13);
        let cfg = SolverConfig::default().with_max_outer(50);
        let r = solve_box(&p, &lo, &hi, &x0, &cfg, VectorInner::Mgn).unwrap();
        for x in r
            .solution
            .iter()
            .chain(r.trace.entries().iter().map(|e| &e.objective))
        {
            assert!(x.is_finite());
        }
        assert!(r
            .solution
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(x, (l, h))| x > l && x < h));
        assert_eq!(r.trace.max_feasibility(), 0.0);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = scalar_ls(1.0, 2.0);
        assert!(solve_pos(&p, &v(&[0.0]), &SolverConfig::default(), VectorInner::Mgn).is_err());
        let (lo, hi) = (v(&[0.0]), v(&[1.0]));
        assert!(solve_box(
            &p,
            &lo,
            &hi,
            &v(&[1.0]),
            &SolverConfig::default(),
            VectorInner::Mgn
        )
        .is_err());
    }
}
