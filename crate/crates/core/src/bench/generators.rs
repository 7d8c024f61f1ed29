//! Seeded problem generators.
//!
//! Every generator draws from `ChaCha20Rng::seed_from_u64(seed)` with a
//! separate stream per purpose, so changing how one component is drawn never
//! shifts another.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{GravidyError, Result};
use crate::linalg::qf;
use crate::problem::{LeastSquaresProblem, StiefelQuadraticProblem};

pub const GENERATOR_NAME: &str =
    "ChaCha20 (rand_chacha 0.9), seed_from_u64(seed), one stream per purpose";

const STREAM_MATRIX: u64 = 1;
const STREAM_TRUTH: u64 = 2;
const STREAM_START: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal_matrix(r: &mut ChaCha20Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(r))
}

#[derive(Debug, Clone)]
pub struct VectorInstance {
    pub problem: LeastSquaresProblem,
    pub x0: DVector<f64>,
    pub x_star: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct BoxInstance {
    pub problem: LeastSquaresProblem,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub x0: DVector<f64>,
    pub x_star: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StiefelInstance {
    pub problem: StiefelQuadraticProblem,
    pub x0: DMatrix<f64>,
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(GravidyError::Spec(format!(
            "{name} must lie in [0, 1], got {f}"
        )))
    }
}

/// NNLS: `A = |N(0,1)| + 0.05·I` (`m×n`), sparse `x* ≥ 0`, `b = Ax*`,
/// `x₀ ~ U(0.1, 1.1)`.
pub fn gen_nnls(n: usize, m: usize, sparsity: f64, seed: u64) -> Result<VectorInstance> {
    if n < 2 || m < 1 {
        return Err(GravidyError::Spec("nnls needs n >= 2 and m >= 1".into()));
    }
    check_fraction("sparsity", sparsity)?;
    let mut rm = rng(seed, STREAM_MATRIX);
    let mut a = normal_matrix(&mut rm, m, n).abs();
    for i in 0..m.min(n) {
        a[(i, i)] += 0.05;
    }
    let mut rt = rng(seed, STREAM_TRUTH);
    let k = ((sparsity * n as f64).round() as usize).clamp(1, n);
    let mut x_star = DVector::zeros(n);
    for i in sample(&mut rt, n, k) {
        let v: f64 = StandardNormal.sample(&mut rt);
        x_star[i] = v.abs();
    }
    let b = &a * &x_star;
    let mut rs = rng(seed, STREAM_START);
    let x0 = DVector::from_fn(n, |_, _| rs.random_range(0.1..1.1));
    Ok(VectorInstance {
        problem: LeastSquaresProblem::new(a, b)?,
        x0,
        x_star,
    })
}

/// Simplex least squares: `A ~ N(0,1)` (`m×n`), `x* ~ Dirichlet(1)`,
/// `b = Ax*`, `x₀` the barycenter perturbed by up to ±10% and renormalized.
pub fn gen_simplex(n: usize, m: usize, seed: u64) -> Result<VectorInstance> {
    if n < 2 || m < 1 {
        return Err(GravidyError::Spec("simplex needs n >= 2 and m >= 1".into()));
    }
    let mut rm = rng(seed, STREAM_MATRIX);
    let a = normal_matrix(&mut rm, m, n);
    let mut rt = rng(seed, STREAM_TRUTH);
    let e = DVector::from_fn(n, |_, _| {
        let v: f64 = Exp1.sample(&mut rt);
        v
    });
    let x_star = &e / e.sum();
    let b = &a * &x_star;
    let mut rs = rng(seed, STREAM_START);
    let raw = DVector::from_fn(n, |_, _| (1.0 + rs.random_range(-0.1..0.1)) / n as f64);
    let x0 = &raw / raw.sum();
    Ok(VectorInstance {
        problem: LeastSquaresProblem::new(a, b)?,
        x0,
        x_star,
    })
}

/// Box least squares on `[−1, 1]ⁿ`: `A ~ N(0,1)`, `x*` with a fraction
/// `active_frac` of coordinates on a bound, `b = Ax*`, `x₀ = 0`.
pub fn gen_box(n: usize, m: usize, active_frac: f64, seed: u64) -> Result<BoxInstance> {
    if n < 1 || m < 1 {
        return Err(GravidyError::Spec("box needs n >= 1 and m >= 1".into()));
    }
    check_fraction("active fraction", active_frac)?;
    let mut rm = rng(seed, STREAM_MATRIX);
    let a = normal_matrix(&mut rm, m, n);
    let mut rt = rng(seed, STREAM_TRUTH);
    let mut x_star = DVector::from_fn(n, |_, _| rt.random_range(-0.9..0.9));
    let k = (active_frac * n as f64).round() as usize;
    for i in sample(&mut rt, n, k.min(n)) {
        x_star[i] = if rt.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    let b = &a * &x_star;
    Ok(BoxInstance {
        problem: LeastSquaresProblem::new(a, b)?,
        lower: DVector::from_element(n, -1.0),
        upper: DVector::from_element(n, 1.0),
        x0: DVector::zeros(n),
        x_star,
    })
}

/// `Q⁽ʲ⁾ = VⱼDⱼVⱼᵀ` with Haar-like `Vⱼ` and a log-uniform spectrum on
/// `[1, cond]` whose endpoints are attained; `X₀ = qf(N(0,1))`.
pub fn gen_stiefel(n: usize, p: usize, cond: f64, seed: u64) -> Result<StiefelInstance> {
    if p == 0 || p > n {
        return Err(GravidyError::Spec(format!(
            "stiefel needs 1 <= p <= n, got n={n}, p={p}"
        )));
    }
    if !(cond >= 1.0 && cond.is_finite()) {
        return Err(GravidyError::Spec(format!("cond must be >= 1, got {cond}")));
    }
    let mut rm = rng(seed, STREAM_MATRIX);
    let log_c = cond.ln();
    let mut blocks = Vec::with_capacity(p);
    for _ in 0..p {
        let v = qf(&normal_matrix(&mut rm, n, n));
        let d = DVector::from_fn(n, |i, _| {
            if i == 0 {
                1.0
            } else if i == n - 1 {
                cond
            } else {
                (rm.random::<f64>() * log_c).exp()
            }
        });
        let q = &v * DMatrix::from_diagonal(&d) * v.transpose();
        // exact symmetry
        let q = (&q + q.transpose()) * 0.5;
        blocks.push(q);
    }
    let mut rs = rng(seed, STREAM_START);
    let x0 = qf(&normal_matrix(&mut rs, n, p));
    Ok(StiefelInstance {
        problem: StiefelQuadraticProblem::new(blocks)?,
        x0,
    })
}
