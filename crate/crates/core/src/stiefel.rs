//! Implicit Cayley steps on the Stiefel manifold `St(n, p)`.
//!
//! The step solves `F(Y) = (I + η/2·A(Y))Y − (I − η/2·A(Y))X_k = 0` with
//! `A(Y) = G(Y)Yᵀ − YG(Y)ᵀ`. Any root is orthonormal because it is the Cayley
//! image of `X_k`. Two inner solvers are provided: matrix-free Newton–Krylov
//! started from the symmetric Cayley predictor, and dense Newton–Raphson on
//! the assembled `np × np` Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::config::{Metrics, OuterLoop, SolveStatus, SolverConfig, SolverReport};
use crate::error::{check_dim, GravidyError, Result};
use crate::krylov::{gmres, GmresOptions};
use crate::linalg::{polar, qf, stiefel_defect, sym};
use crate::problem::StiefelQuadraticProblem;

pub const FEASIBILITY_TOL: f64 = 1e-10;
const MAX_DENSE_DIM: usize = 2000;
const PREDICTOR_COND_LIMIT: f64 = 1e12;
const LM_FALLBACK: f64 = 1e-10;

/// An `n×p` matrix with orthonormal columns and its measured defect.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    x: DMatrix<f64>,
    defect: f64,
}

impl StiefelPoint {
    /// Wraps `x`, failing if `‖XᵀX − I‖_F > 1e-10`.
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.ncols() > x.nrows() || x.ncols() == 0 {
            return Err(GravidyError::InvalidInput(format!(
                "stiefel point: shape {}x{} needs 1 <= p <= n",
                x.nrows(),
                x.ncols()
            )));
        }
        let defect = stiefel_defect(&x);
        if !(defect <= FEASIBILITY_TOL) {
            return Err(GravidyError::InvalidInput(format!(
                "stiefel point: defect {defect:e} exceeds {FEASIBILITY_TOL:e}"
            )));
        }
        Ok(Self { x, defect })
    }

    /// Orthonormalizes an arbitrary full-rank matrix with thin QR.
    pub fn orthonormalize(y: &DMatrix<f64>) -> Self {
        Self::tracked(qf(y))
    }

    pub(crate) fn tracked(x: DMatrix<f64>) -> Self {
        let defect = stiefel_defect(&x);
        Self { x, defect }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }
}

/// `A = GYᵀ − YGᵀ`.
pub fn skew_field(g: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim(y.nrows(), g.nrows(), "skew_field: rows")?;
    check_dim(y.ncols(), g.ncols(), "skew_field: cols")?;
    let a = g * y.transpose();
    let at = a.transpose();
    Ok(a - at)
}

/// `(GYᵀ − YGᵀ)M` through `p×p` products.
fn skew_apply(g: &DMatrix<f64>, y: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    g * y.tr_mul(m) - y * g.tr_mul(m)
}

/// `gradΦ(X) = G − X·sym(XᵀG)`.
pub fn riemannian_grad(g: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    g - x * sym(&x.tr_mul(g))
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn mat_of(v: &DVector<f64>, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, p, v.as_slice())
}

/// Residual and derivative data for one implicit Cayley step at the current
/// unknown `Y`.
#[derive(Debug, Clone)]
pub struct CayleyResidualContext<'a> {
    prob: &'a StiefelQuadraticProblem,
    anchor: DMatrix<f64>,
    eta: f64,
    y: DMatrix<f64>,
    gy: DMatrix<f64>,
    y_plus_anchor: DMatrix<f64>,
}

impl<'a> CayleyResidualContext<'a> {
    pub fn new(
        prob: &'a StiefelQuadraticProblem,
        anchor: &StiefelPoint,
        eta: f64,
        y: DMatrix<f64>,
    ) -> Result<Self> {
        prob.check_shape(anchor.matrix())?;
        prob.check_shape(&y)?;
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(GravidyError::InvalidInput(
                "cayley: eta must be >= 0".into(),
            ));
        }
        let gy = prob.apply(&y);
        let y_plus_anchor = &y + anchor.matrix();
        Ok(Self {
            prob,
            anchor: anchor.matrix().clone(),
            eta,
            y,
            gy,
            y_plus_anchor,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn anchor(&self) -> &DMatrix<f64> {
        &self.anchor
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.gy
    }

    /// Moves the unknown to `y`, refreshing the cached `G(Y)`.
    pub fn set_point(&mut self, y: DMatrix<f64>) {
        self.gy = self.prob.apply(&y);
        self.y_plus_anchor = &y + &self.anchor;
        self.y = y;
    }

    /// `A(Y)` as a dense `n×n` matrix.
    pub fn skew(&self) -> DMatrix<f64> {
        skew_field(&self.gy, &self.y).expect("shapes checked at construction")
    }

    /// `F(Y) = Y − X_k + (η/2)A(Y)(Y + X_k)`.
    pub fn residual(&self) -> DMatrix<f64> {
        let c = 0.5 * self.eta;
        &self.y - &self.anchor + skew_apply(&self.gy, &self.y, &self.y_plus_anchor) * c
    }

    /// Directional derivative `F′(Y)[H]`.
    pub fn jvp(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let c = 0.5 * self.eta;
        let gh = self.prob.apply(h);
        let m = &self.y_plus_anchor;
        let d_a_m = &gh * self.y.tr_mul(m) + &self.gy * h.tr_mul(m)
            - h * self.gy.tr_mul(m)
            - &self.y * gh.tr_mul(m);
        h + (skew_apply(&self.gy, &self.y, h) + d_a_m) * c
    }

    /// Applies `(I + (η/2)A(Y))⁻¹` column by column through a `2p×2p`
    /// Woodbury solve, writing `A = WSWᵀ` with `W = [G(Y) Y]`.
    pub fn woodbury_preconditioner(&self) -> Option<impl Fn(&DVector<f64>) -> DVector<f64> + '_> {
        let p = self.y.ncols();
        let n = self.y.nrows();
        let c = 0.5 * self.eta;
        let mut w = DMatrix::zeros(n, 2 * p);
        w.columns_mut(0, p).copy_from(&self.gy);
        w.columns_mut(p, p).copy_from(&self.y);
        // S⁻¹ = [[0, −I], [I, 0]]
        let mut core = w.tr_mul(&w) * c;
        for i in 0..p {
            core[(i, p + i)] -= 1.0;
            core[(p + i, i)] += 1.0;
        }
        let lu = core.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(move |v: &DVector<f64>| {
            let hm = mat_of(v, n, p);
            let inner = lu.solve(&w.tr_mul(&hm)).expect("checked invertible");
            vec_of(&(&hm - &w * inner * c))
        })
    }
}

/// `F(Y)` for the context.
pub fn cayley_residual(ctx: &CayleyResidualContext<'_>) -> DMatrix<f64> {
    ctx.residual()
}

/// `F′(Y)[H]`.
pub fn frechet_jvp(ctx: &CayleyResidualContext<'_>, h: &DMatrix<f64>) -> DMatrix<f64> {
    ctx.jvp(h)
}

/// `Y₀ = (I − (η/2)A(X̂))(I + (η/2)A(X̂))⁻¹X_k`, feasible for every `η`.
///
/// The rounding left by the dense solve is removed with a final QR.
pub fn symmetric_cayley_predictor(
    prob: &StiefelQuadraticProblem,
    x_k: &StiefelPoint,
    x_hat: &StiefelPoint,
    eta: f64,
) -> Result<StiefelPoint> {
    prob.check_shape(x_k.matrix())?;
    prob.check_shape(x_hat.matrix())?;
    let a = skew_field(&prob.apply(x_hat.matrix()), x_hat.matrix())?;
    if eta == 0.0 || a.iter().all(|v| *v == 0.0) {
        return Ok(x_k.clone());
    }
    let c = 0.5 * eta;
    let n = a.nrows();
    if 1.0 + c * a.norm() > PREDICTOR_COND_LIMIT {
        return Err(GravidyError::Numerical {
            context: "symmetric Cayley predictor",
            detail: format!("condition estimate of I + (eta/2)A exceeds {PREDICTOR_COND_LIMIT:e}"),
        });
    }
    let lhs = DMatrix::identity(n, n) + &a * c;
    let t = lhs
        .lu()
        .solve(x_k.matrix())
        .ok_or_else(|| GravidyError::Numerical {
            context: "symmetric Cayley predictor",
            detail: "singular I + skew".into(),
        })?;
    let y0 = &t - &a * &t * c;
    Ok(StiefelPoint::orthonormalize(&y0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StiefelInner {
    #[default]
    NkGmres,
    DenseNr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Retraction {
    #[default]
    Qr,
    Polar,
}

/// How a Newton correction `H` is applied to `Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrectionUpdate {
    /// `Y ← Retr(Y + H)`.
    #[default]
    Retracted,
    /// `Y ← Y + H`.
    Additive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiefelOptions {
    pub inner: StiefelInner,
    pub retraction: Retraction,
    pub update: CorrectionUpdate,
    pub preconditioner: bool,
    pub gmres: GmresOptions,
    pub eta_min: f64,
    pub eta_max: f64,
    pub grow: f64,
    pub shrink: f64,
    pub c1: f64,
}

impl Default for StiefelOptions {
    fn default() -> Self {
        Self {
            inner: StiefelInner::NkGmres,
            retraction: Retraction::Qr,
            update: CorrectionUpdate::Retracted,
            preconditioner: false,
            gmres: GmresOptions::default(),
            eta_min: 1e-6,
            eta_max: 1e3,
            grow: 2.0,
            shrink: 0.5,
            c1: 1e-4,
        }
    }
}

impl From<StiefelInner> for StiefelOptions {
    fn from(inner: StiefelInner) -> Self {
        Self {
            inner,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CayleyStepOutcome {
    pub y: StiefelPoint,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    /// `‖F‖_F` at every Newton iterate, starting point included.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

fn apply_correction(y: &DMatrix<f64>, h: &DMatrix<f64>, opts: &StiefelOptions) -> DMatrix<f64> {
    let z = y + h;
    match opts.update {
        CorrectionUpdate::Additive => z,
        CorrectionUpdate::Retracted => match opts.retraction {
            Retraction::Qr => qf(&z),
            Retraction::Polar => polar(&z).unwrap_or_else(|| qf(&z)),
        },
    }
}

fn newton_tol(config: &SolverConfig, x_k: &StiefelPoint) -> f64 {
    config.inner_tol * (1.0 + x_k.matrix().norm())
}

/// Shared Newton driver: `direction` returns the correction at the current
/// context along with the linear-solver iterations it used.
fn newton_loop<'a, D>(
    mut ctx: CayleyResidualContext<'a>,
    x_k: &StiefelPoint,
    config: &SolverConfig,
    opts: &StiefelOptions,
    mut direction: D,
) -> Result<CayleyStepOutcome>
where
    D: FnMut(&CayleyResidualContext<'a>, &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)>,
{
    let tol = newton_tol(config, x_k);
    let mut f = ctx.residual();
    let mut nf = f.norm();
    let mut history = vec![nf];
    let mut best = (ctx.y().clone(), nf);
    let mut krylov = 0;
    let mut iterations = 0;
    while nf > tol && iterations < config.max_inner {
        iterations += 1;
        let (h, k) = direction(&ctx, &f)?;
        krylov += k;
        // backtrack on ½‖F‖²
        let m0 = 0.5 * nf * nf;
        let mut t = 1.0;
        let mut accepted = None;
        while t >= 1e-12 {
            let trial = apply_correction(ctx.y(), &(&h * t), opts);
            let mut tctx = ctx.clone();
            tctx.set_point(trial);
            let ft = tctx.residual();
            let nft = ft.norm();
            if nft.is_finite() && 0.5 * nft * nft <= (1.0 - 2.0 * config.armijo_c * t) * m0 {
                accepted = Some((tctx, ft, nft));
                break;
            }
            t *= 0.5;
        }
        let Some((tctx, ft, nft)) = accepted else {
            break;
        };
        ctx = tctx;
        f = ft;
        nf = nft;
        history.push(nf);
        if nf < best.1 {
            best = (ctx.y().clone(), nf);
        }
    }
    Ok(CayleyStepOutcome {
        y: StiefelPoint::tracked(best.0),
        newton_iterations: iterations,
        krylov_iterations: krylov,
        residual_history: history,
        converged: best.1 <= tol,
    })
}

/// Newton–Krylov step from the symmetric Cayley predictor. Each correction
/// solves `F′(Y)[H] = −F(Y)` by restarted GMRES.
pub fn nk_gmres_step(
    prob: &StiefelQuadraticProblem,
    x_k: &StiefelPoint,
    eta: f64,
    config: &SolverConfig,
    opts: &StiefelOptions,
) -> Result<CayleyStepOutcome> {
    let ctx = CayleyResidualContext::new(prob, x_k, eta, x_k.matrix().clone())?;
    let f0 = ctx.residual().norm();
    if f0 <= newton_tol(config, x_k) {
        return Ok(CayleyStepOutcome {
            y: x_k.clone(),
            newton_iterations: 0,
            krylov_iterations: 0,
            residual_history: vec![f0],
            converged: true,
        });
    }
    let y0 = symmetric_cayley_predictor(prob, x_k, x_k, eta)?;
    let ctx = CayleyResidualContext::new(prob, x_k, eta, y0.into_matrix())?;
    let (n, p) = (prob.n(), prob.p());
    let gm = GmresOptions {
        restart: opts.gmres.restart.min(n * p),
        ..opts.gmres
    };
    newton_loop(ctx, x_k, config, opts, |ctx, f| {
        let apply = |v: &DVector<f64>| vec_of(&ctx.jvp(&mat_of(v, n, p)));
        let rhs = -vec_of(f);
        let out = if opts.preconditioner {
            gmres(
                apply,
                ctx.woodbury_preconditioner(),
                &rhs,
                DVector::zeros(n * p),
                &gm,
            )
        } else {
            gmres(
                apply,
                None::<fn(&DVector<f64>) -> DVector<f64>>,
                &rhs,
                DVector::zeros(n * p),
                &gm,
            )
        };
        Ok((mat_of(&out.x, n, p), out.iterations))
    })
}

/// Dense Jacobian of `vec F` at the context point, assembled column by column
/// from JVPs of the coordinate directions in column-major order.
pub fn assemble_jacobian(ctx: &CayleyResidualContext<'_>) -> DMatrix<f64> {
    let (n, p) = ctx.y().shape();
    let np = n * p;
    let mut j = DMatrix::zeros(np, np);
    let mut e = DMatrix::zeros(n, p);
    for k in 0..np {
        e[k] = 1.0;
        j.set_column(k, &vec_of(&ctx.jvp(&e)));
        e[k] = 0.0;
    }
    j
}

/// Dense Newton–Raphson step from the symmetric Cayley predictor with LU
/// solves, additive corrections
/// and backtracking on `½‖F‖²`, followed by one QR retraction of the root
/// unless `opts.update` is `Additive`. A singular Jacobian falls back to
/// `(JᵀJ + εI)h = −JᵀF`.
pub fn dense_nr_step(
    prob: &StiefelQuadraticProblem,
    x_k: &StiefelPoint,
    eta: f64,
    config: &SolverConfig,
    opts: &StiefelOptions,
) -> Result<CayleyStepOutcome> {
    let (n, p) = (prob.n(), prob.p());
    if n * p > MAX_DENSE_DIM {
        return Err(GravidyError::InvalidInput(format!(
            "dense NR: np = {} exceeds {MAX_DENSE_DIM}",
            n * p
        )));
    }
    let y0 = symmetric_cayley_predictor(prob, x_k, x_k, eta)?;
    let ctx = CayleyResidualContext::new(prob, x_k, eta, y0.into_matrix())?;
    let additive = StiefelOptions {
        update: CorrectionUpdate::Additive,
        ..opts.clone()
    };
    let mut out = newton_loop(ctx, x_k, config, &additive, |ctx, f| {
        let j = assemble_jacobian(ctx);
        let rhs = -vec_of(f);
        let h = match j.clone().lu().solve(&rhs) {
            Some(h) if h.iter().all(|v| v.is_finite()) => h,
            _ => {
                let mut jtj = j.tr_mul(&j);
                for i in 0..n * p {
                    jtj[(i, i)] += LM_FALLBACK;
                }
                jtj.cholesky()
                    .ok_or_else(|| GravidyError::Numerical {
                        context: "dense NR",
                        detail: "LM fallback failed".into(),
                    })?
                    .solve(&j.tr_mul(&rhs))
            }
        };
        Ok((mat_of(&h, n, p), 0))
    })?;
    if opts.update == CorrectionUpdate::Retracted && out.newton_iterations > 0 {
        out.y = StiefelPoint::orthonormalize(out.y.matrix());
    }
    Ok(out)
}

/// One implicit Cayley step with the configured inner solver.
pub fn cayley_step(
    prob: &StiefelQuadraticProblem,
    x_k: &StiefelPoint,
    eta: f64,
    config: &SolverConfig,
    opts: &StiefelOptions,
) -> Result<CayleyStepOutcome> {
    match opts.inner {
        StiefelInner::NkGmres => nk_gmres_step(prob, x_k, eta, config, opts),
        StiefelInner::DenseNr => dense_nr_step(prob, x_k, eta, config, opts),
    }
}

/// GRAVIDY-St: implicit Cayley steps with Armijo acceptance
/// `Φ(X⁺) ≤ Φ(X) − c₁η‖gradΦ(X⁺)‖²` and adaptive `η`.
pub fn solve_stiefel(
    prob: &StiefelQuadraticProblem,
    x0: &DMatrix<f64>,
    config: &SolverConfig,
    options: impl Into<StiefelOptions>,
) -> Result<SolverReport<DMatrix<f64>>> {
    let opts = options.into();
    config.validate()?;
    prob.check_shape(x0)?;
    let mut x = StiefelPoint::new(x0.clone())?;
    let mut eta = config.eta.clamp(opts.eta_min, opts.eta_max);
    let mut lp = OuterLoop::new(config);
    let (mut fx, gx) = prob.value_grad(x.matrix())?;
    let mut grad_norm = riemannian_grad(&gx, x.matrix()).norm();
    let mut inner_iterations = 0;
    let mut pinned_rejections = 0;
    loop {
        if let Some(status) = lp.record(Metrics {
            objective: fx,
            kkt: grad_norm,
            feasibility: x.defect(),
            inner_iterations,
            at_face: 0,
        }) {
            return Ok(lp.finish(x.into_matrix(), status));
        }
        let step = cayley_step(prob, &x, eta, config, &opts)?;
        inner_iterations = step.newton_iterations;
        let y = step.y;
        let (fy, gy) = prob.value_grad(y.matrix())?;
        let gy_norm = riemannian_grad(&gy, y.matrix()).norm();
        let accept = fy.is_finite() && fy <= fx - opts.c1 * eta * gy_norm * gy_norm;
        if accept {
            x = y;
            fx = fy;
            grad_norm = gy_norm;
            eta = (eta * opts.grow).min(opts.eta_max);
            pinned_rejections = 0;
        } else {
            if eta <= opts.eta_min {
                pinned_rejections += 1;
                if pinned_rejections >= 2 {
                    return Ok(lp.finish(x.into_matrix(), SolveStatus::Stalled));
                }
            }
            eta = (eta * opts.shrink).max(opts.eta_min);
        }
    }
}
