//! Experiment runner over (method × seed).

use std::time::Duration;

use rayon::prelude::*;

use super::generators::{gen_box, gen_nnls, gen_simplex, gen_stiefel, GENERATOR_NAME};
use super::records::{
    median, BenchRecord, ExperimentSummary, Geometry, InnerId, MethodId, MethodSummary, RunSummary,
};
use crate::baselines::{
    entropic_mirror_descent, multiplicative_updates_nnls, pgd_nesterov, projected_bb, rgd_qr,
    wen_yin_cayley, EmdStep, ProjectionOp,
};
use crate::config::{IterateTrace, SolverConfig};
use crate::error::{GravidyError, Result};
use crate::pos_box::{solve_box, solve_pos, VectorInner};
use crate::simplex::{solve_simplex, SimplexInner};
use crate::stiefel::{solve_stiefel, StiefelInner};

/// Tolerance behind the time-to-tolerance column.
pub const TIME_TO_TOL: f64 = 1e-8;

/// One sweep: every method in `methods` on every seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub geometry: Geometry,
    pub methods: Vec<MethodId>,
    pub n: usize,
    /// Rows of `A` on vector geometries; defaults to `n`.
    pub m: Option<usize>,
    pub p: usize,
    pub eta: f64,
    pub seeds: Vec<u64>,
    pub max_outer: usize,
    pub time_budget: Option<Duration>,
    pub kkt_tol: f64,
    pub cond: f64,
    pub sparsity: f64,
    pub active_frac: f64,
    /// Emit every `trace_every`-th row (the last row is always emitted).
    pub trace_every: usize,
}

impl ExperimentSpec {
    pub fn new(geometry: Geometry, methods: Vec<MethodId>) -> Self {
        Self {
            geometry,
            methods,
            n: 50,
            m: None,
            p: 2,
            eta: 100.0,
            seeds: (0..10).collect(),
            max_outer: 1000,
            time_budget: None,
            kkt_tol: 1e-8,
            cond: 100.0,
            sparsity: 0.2,
            active_frac: 0.3,
            trace_every: 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(GravidyError::Spec("no methods given".into()));
        }
        if self.seeds.is_empty() {
            return Err(GravidyError::Spec("no seeds given".into()));
        }
        for m in &self.methods {
            if !m.is_valid_for(self.geometry) {
                return Err(GravidyError::Spec(format!(
                    "method `{m}` is not available on geometry `{}`",
                    self.geometry
                )));
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(GravidyError::Spec(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(GravidyError::Spec("kkt tolerance must be positive".into()));
        }
        if self.trace_every == 0 {
            return Err(GravidyError::Spec("trace-every must be >= 1".into()));
        }
        if self.n == 0 || self.rows() == 0 {
            return Err(GravidyError::Spec("dimensions must be positive".into()));
        }
        if self.geometry == Geometry::Stiefel && (self.p == 0 || self.p > self.n) {
            return Err(GravidyError::Spec(format!(
                "need 1 <= p <= n, got p={}",
                self.p
            )));
        }
        Ok(())
    }

    fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            eta: self.eta,
            max_outer: self.max_outer,
            kkt_tol: self.kkt_tol,
            time_budget: self.time_budget,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<BenchRecord>,
    pub summary: ExperimentSummary,
}

fn vector_inner(i: InnerId) -> VectorInner {
    match i {
        InnerId::Newton => VectorInner::Newton,
        _ => VectorInner::Mgn,
    }
}

fn simplex_inner(i: InnerId) -> SimplexInner {
    match i {
        InnerId::FixedPoint => SimplexInner::FixedPoint,
        InnerId::ReducedMgn => SimplexInner::ReducedMgn,
        _ => SimplexInner::NewtonKkt,
    }
}

fn stiefel_inner(i: InnerId) -> StiefelInner {
    match i {
        InnerId::DenseNr => StiefelInner::DenseNr,
        _ => StiefelInner::NkGmres,
    }
}

/// Runs one method on one seed and returns its trace and status.
pub fn run_single(
    spec: &ExperimentSpec,
    method: MethodId,
    seed: u64,
) -> Result<(IterateTrace, String)> {
    let cfg = spec.solver_config();
    let (n, m) = (spec.n, spec.rows());
    let unsupported = || {
        GravidyError::Spec(format!(
            "method `{method}` is not available on `{}`",
            spec.geometry
        ))
    };
    macro_rules! done {
        ($r:expr) => {{
            let r = $r?;
            Ok((r.trace, r.status.to_string()))
        }};
    }
    match spec.geometry {
        Geometry::Pos => {
            let inst = gen_nnls(n, m, spec.sparsity, seed)?;
            let (p, x0) = (&inst.problem, &inst.x0);
            match method {
                MethodId::Gravidy(i) => done!(solve_pos(p, x0, &cfg, vector_inner(i))),
                MethodId::PgdNesterov => done!(pgd_nesterov(p, &ProjectionOp::Orthant, x0, &cfg)),
                MethodId::ProjectedBb => done!(projected_bb(p, &ProjectionOp::Orthant, x0, &cfg)),
                MethodId::Mu => done!(multiplicative_updates_nnls(p, x0, &cfg)),
                _ => Err(unsupported()),
            }
        }
        Geometry::Simplex => {
            let inst = gen_simplex(n, m, seed)?;
            let (p, x0) = (&inst.problem, &inst.x0);
            match method {
                MethodId::Gravidy(i) => done!(solve_simplex(p, x0, &cfg, simplex_inner(i))),
                MethodId::PgdNesterov => done!(pgd_nesterov(p, &ProjectionOp::Simplex, x0, &cfg)),
                MethodId::ProjectedBb => done!(projected_bb(p, &ProjectionOp::Simplex, x0, &cfg)),
                MethodId::Emd => done!(entropic_mirror_descent(p, x0, &cfg, EmdStep::Decaying)),
                _ => Err(unsupported()),
            }
        }
        Geometry::Box => {
            let inst = gen_box(n, m, spec.active_frac, seed)?;
            let (p, x0) = (&inst.problem, &inst.x0);
            let proj = ProjectionOp::boxed(inst.lower.clone(), inst.upper.clone())?;
            match method {
                MethodId::Gravidy(i) => {
                    done!(solve_box(
                        p,
                        &inst.lower,
                        &inst.upper,
                        x0,
                        &cfg,
                        vector_inner(i)
                    ))
                }
                MethodId::PgdNesterov => done!(pgd_nesterov(p, &proj, x0, &cfg)),
                MethodId::ProjectedBb => done!(projected_bb(p, &proj, x0, &cfg)),
                _ => Err(unsupported()),
            }
        }
        Geometry::Stiefel => {
            let inst = gen_stiefel(n, spec.p, spec.cond, seed)?;
            let (p, x0) = (&inst.problem, &inst.x0);
            match method {
                MethodId::Gravidy(i) => done!(solve_stiefel(p, x0, &cfg, stiefel_inner(i))),
                MethodId::WenYin => done!(wen_yin_cayley(p, x0, &cfg)),
                MethodId::RgdQr => done!(rgd_qr(p, x0, &cfg)),
                _ => Err(unsupported()),
            }
        }
    }
}

fn records_for(
    spec: &ExperimentSpec,
    method: MethodId,
    seed: u64,
    trace: &IterateTrace,
) -> Vec<BenchRecord> {
    let steps = trace.steps();
    steps
        .iter()
        .enumerate()
        .filter(|(k, e)| e.iteration % spec.trace_every == 0 || *k + 1 == steps.len())
        .map(|(_, e)| BenchRecord {
            geometry: spec.geometry,
            method,
            seed,
            outer_iter: e.iteration,
            f_value: e.objective,
            kkt: e.kkt,
            feasibility: e.feasibility,
            cum_seconds: e.seconds,
            inner_iters: e.inner_iterations,
        })
        .collect()
}

fn summarize_run(
    method: MethodId,
    seed: u64,
    outcome: &Result<(IterateTrace, String)>,
) -> RunSummary {
    match outcome {
        Ok((trace, status)) => {
            let last = trace.last();
            RunSummary {
                method,
                seed,
                status: status.clone(),
                error: None,
                iterations: trace.steps().len(),
                final_f: last.map(|e| e.objective),
                final_kkt: last.map(|e| e.kkt),
                final_feasibility: last.map(|e| e.feasibility),
                seconds: last.map(|e| e.seconds),
                time_to_tol: trace
                    .entries()
                    .iter()
                    .find(|e| e.kkt <= TIME_TO_TOL)
                    .map(|e| e.seconds),
            }
        }
        Err(e) => RunSummary {
            method,
            seed,
            status: "error".into(),
            error: Some(e.to_string()),
            iterations: 0,
            final_f: None,
            final_kkt: None,
            final_feasibility: None,
            seconds: None,
            time_to_tol: None,
        },
    }
}

/// Per-method medians over the runs in `runs`.
pub fn summarize_methods(methods: &[MethodId], runs: &[RunSummary]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.method == method).collect();
            let finals: Vec<f64> = mine.iter().filter_map(|r| r.final_kkt).collect();
            let times: Vec<f64> = mine.iter().filter_map(|r| r.time_to_tol).collect();
            MethodSummary {
                method,
                runs: mine.len(),
                failed_runs: mine.iter().filter(|r| r.error.is_some()).count(),
                converged_runs: mine.iter().filter(|r| r.status == "converged").count(),
                median_final_kkt: median(&finals),
                median_time_to_tol: median(&times),
                runs_reaching_tol: times.len(),
            }
        })
        .collect()
}

/// Runs every (method, seed) pair, in parallel when `threads` allows, and
/// returns records and summary in (method, seed) order.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentOutput> {
    spec.validate()?;
    let jobs: Vec<(MethodId, u64)> = spec
        .methods
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let run_all = || -> Vec<Result<(IterateTrace, String)>> {
        jobs.par_iter()
            .map(|&(m, s)| run_single(spec, m, s))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| GravidyError::Spec(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    let mut records = Vec::new();
    let mut runs = Vec::with_capacity(jobs.len());
    for (&(method, seed), outcome) in jobs.iter().zip(outcomes.iter()) {
        if let Ok((trace, _)) = outcome {
            records.extend(records_for(spec, method, seed, trace));
        }
        runs.push(summarize_run(method, seed, outcome));
    }
    let summary = ExperimentSummary {
        generator: GENERATOR_NAME.to_string(),
        geometry: spec.geometry,
        n: spec.n,
        m: spec.rows(),
        p: spec.p,
        eta: spec.eta,
        max_outer: spec.max_outer,
        kkt_tol: spec.kkt_tol,
        time_tol: TIME_TO_TOL,
        seeds: spec.seeds.clone(),
        methods: summarize_methods(&spec.methods, &runs),
        runs,
    };
    Ok(ExperimentOutput { records, summary })
}
