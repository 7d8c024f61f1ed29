//! Restarted GMRES with optional left preconditioning, matrix free.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    /// Relative tolerance on the (preconditioned) residual.
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 30,
            max_iter: 200,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` given the action of `A`, optionally left-preconditioned
/// by the action of `M⁻¹`.
pub fn gmres<A, P>(
    apply: A,
    precond: Option<P>,
    b: &DVector<f64>,
    x0: DVector<f64>,
    opts: &GmresOptions,
) -> GmresOutcome
where
    A: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let pre = |v: DVector<f64>| match &precond {
        Some(p) => p(&v),
        None => v,
    };
    let mut x = x0;
    let pb = pre(b.clone());
    let bnorm = pb.norm();
    if bnorm == 0.0 {
        return GmresOutcome {
            x: DVector::zeros(n),
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        };
    }
    let restart = opts.restart.clamp(1, n.max(1));
    let mut total = 0;
    let mut rel = f64::INFINITY;

    while total < opts.max_iter {
        let r = pre(b - apply(&x));
        let beta = r.norm();
        rel = beta / bnorm;
        if rel <= opts.rel_tol {
            return GmresOutcome {
                x,
                iterations: total,
                rel_residual: rel,
                converged: true,
            };
        }
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(restart + 1);
        basis.push(r / beta);
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = beta;
        let mut k_used = 0;

        for k in 0..restart {
            if total >= opts.max_iter {
                break;
            }
            total += 1;
            let mut w = pre(apply(&basis[k]));
            // modified Gram–Schmidt
            for (i, v) in basis.iter().enumerate() {
                let hij = w.dot(v);
                h[(i, k)] = hij;
                w.axpy(-hij, v, 1.0);
            }
            let wn = w.norm();
            h[(k + 1, k)] = wn;
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let denom = h[(k, k)].hypot(h[(k + 1, k)]);
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[(k, k)] / denom;
            sn[k] = h[(k + 1, k)] / denom;
            h[(k, k)] = denom;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= opts.rel_tol || wn <= 1e-300 {
                break;
            }
            basis.push(w / wn);
        }

        if k_used > 0 {
            // back substitution on the k_used×k_used upper triangle
            let mut y = DVector::<f64>::zeros(k_used);
            for i in (0..k_used).rev() {
                let mut s = g[i];
                for j in i + 1..k_used {
                    s -= h[(i, j)] * y[j];
                }
                y[i] = s / h[(i, i)];
            }
            for (i, yi) in y.iter().enumerate() {
                x.axpy(*yi, &basis[i], 1.0);
            }
        } else {
            break;
        }
        if rel <= opts.rel_tol {
            // confirm with a true residual
            let tr = pre(b - apply(&x)).norm() / bnorm;
            rel = tr;
            if tr <= opts.rel_tol * 10.0 {
                return GmresOutcome {
                    x,
                    iterations: total,
                    rel_residual: tr,
                    converged: true,
                };
            }
        }
    }
    GmresOutcome {
        x,
        iterations: total,
        rel_residual: rel,
        converged: rel <= opts.rel_tol,
    }
}
