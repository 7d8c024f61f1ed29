//! Solver configuration and per-iteration traces shared by every method.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{GravidyError, Result};

/// Knobs shared by all outer/inner solvers.
///
/// `eta` has no upper bound: the implicit steps are stable for any positive
/// stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Outer implicit stepsize.
    pub eta: f64,
    /// Maximum number of outer steps.
    pub max_outer: usize,
    /// Maximum number of inner iterations per outer step.
    pub max_inner: usize,
    pub kkt_tol: f64,
    pub inner_tol: f64,
    pub armijo_c: f64,
    pub backtrack_beta: f64,
    /// Initial Levenberg–Marquardt damping. `None` selects
    /// `1e-3·(1 + ‖JᵀF‖∞)` at the start of each inner solve.
    pub lm_damping_init: Option<f64>,
    pub time_budget: Option<Duration>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 100.0,
            max_outer: 1000,
            max_inner: 50,
            kkt_tol: 1e-8,
            inner_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack_beta: 0.5,
            lm_damping_init: None,
            time_budget: None,
        }
    }
}

impl SolverConfig {
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_max_outer(mut self, max_outer: usize) -> Self {
        self.max_outer = max_outer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.eta) {
            return Err(GravidyError::InvalidInput(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !positive(self.kkt_tol) || !positive(self.inner_tol) {
            return Err(GravidyError::InvalidInput(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(GravidyError::InvalidInput(
                "armijo_c must lie in (0, 1)".into(),
            ));
        }
        if !(self.backtrack_beta > 0.0 && self.backtrack_beta < 1.0) {
            return Err(GravidyError::InvalidInput(
                "backtrack_beta must lie in (0, 1)".into(),
            ));
        }
        if self.max_inner == 0 {
            return Err(GravidyError::InvalidInput("max_inner must be >= 1".into()));
        }
        if let Some(m) = self.lm_damping_init {
            if !positive(m) {
                return Err(GravidyError::InvalidInput(
                    "LM damping must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Metrics recorded at one outer iterate. Iteration 0 is the starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub kkt: f64,
    pub feasibility: f64,
    pub inner_iterations: usize,
    pub seconds: f64,
    /// Coordinates whose reparameterized variable sits at the clamp.
    pub at_face: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    CapHit,
    Stalled,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::CapHit => "cap_hit",
            SolveStatus::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    entries: Vec<TraceEntry>,
}

impl IterateTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<TraceEntry>) -> Self {
        Self { entries }
    }

    /// Trace built from an objective sequence alone; handy in tests.
    pub fn from_objectives(values: &[f64]) -> Self {
        Self {
            entries: values
                .iter()
                .enumerate()
                .map(|(k, &f)| TraceEntry {
                    iteration: k,
                    objective: f,
                    kkt: f64::NAN,
                    feasibility: 0.0,
                    inner_iterations: 0,
                    seconds: 0.0,
                    at_face: 0,
                })
                .collect(),
        }
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn initial(&self) -> Option<&TraceEntry> {
        self.entries.first()
    }

    /// Entries after the starting point, one per outer step.
    pub fn steps(&self) -> &[TraceEntry] {
        self.entries.get(1..).unwrap_or(&[])
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.objective).collect()
    }

    /// Largest feasibility defect seen over the whole run.
    pub fn max_feasibility(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.feasibility)
            .fold(0.0, f64::max)
    }
}

/// Output of every solver: final point, trace and termination status.
#[derive(Debug, Clone)]
pub struct SolverReport<X> {
    pub solution: X,
    pub trace: IterateTrace,
    pub status: SolveStatus,
}

impl<X> SolverReport<X> {
    pub fn final_kkt(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.kkt)
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.objective)
    }

    /// Number of outer steps taken (excludes the starting point).
    pub fn iterations(&self) -> usize {
        self.trace.steps().len()
    }
}

/// Bookkeeping for an outer loop: clock, caps and trace.
pub(crate) struct OuterLoop {
    start: Instant,
    kkt_tol: f64,
    max_outer: usize,
    budget: Option<Duration>,
    trace: IterateTrace,
}

pub(crate) struct Metrics {
    pub objective: f64,
    pub kkt: f64,
    pub feasibility: f64,
    pub inner_iterations: usize,
    pub at_face: usize,
}

impl OuterLoop {
    pub fn new(config: &SolverConfig) -> Self {
        Self {
            start: Instant::now(),
            kkt_tol: config.kkt_tol,
            max_outer: config.max_outer,
            budget: config.time_budget,
            trace: IterateTrace::new(),
        }
    }

    /// Records the iterate and returns the termination status, if any.
    pub fn record(&mut self, m: Metrics) -> Option<SolveStatus> {
        let iteration = self.trace.len();
        let kkt = m.kkt;
        self.trace.push(TraceEntry {
            iteration,
            objective: m.objective,
            kkt,
            feasibility: m.feasibility,
            inner_iterations: m.inner_iterations,
            seconds: self.start.elapsed().as_secs_f64(),
            at_face: m.at_face,
        });
        if kkt <= self.kkt_tol {
            Some(SolveStatus::Converged)
        } else if !kkt.is_finite() || !m.objective.is_finite() {
            Some(SolveStatus::Stalled)
        } else if iteration >= self.max_outer
            || self.budget.is_some_and(|b| self.start.elapsed() >= b)
        {
            Some(SolveStatus::CapHit)
        } else {
            None
        }
    }

    pub fn finish<X>(self, solution: X, status: SolveStatus) -> SolverReport<X> {
        SolverReport {
            solution,
            trace: self.trace,
            status,
        }
    }
}
