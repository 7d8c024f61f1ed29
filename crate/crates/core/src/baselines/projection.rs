use nalgebra::DVector;

use crate::error::{check_dim, GravidyError, Result};

/// Euclidean projection onto one of the vector constraint sets.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionOp {
    Orthant,
    Simplex,
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
}

impl ProjectionOp {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len(), "box projection bounds")?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(GravidyError::InvalidInput(
                "box projection: lower > upper".into(),
            ));
        }
        Ok(ProjectionOp::Box { lower, upper })
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            ProjectionOp::Orthant => z.map(|t| t.max(0.0)),
            ProjectionOp::Simplex => project_simplex(z),
            ProjectionOp::Box { lower, upper } => DVector::from_iterator(
                z.len(),
                z.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(t, (l, u))| t.clamp(*l, *u)),
            ),
        }
    }

    /// Largest violation of the constraints at `x` (0 when feasible).
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        match self {
            ProjectionOp::Orthant => x.iter().map(|t| (-t).max(0.0)).fold(0.0, f64::max),
            ProjectionOp::Simplex => {
                let neg = x.iter().map(|t| (-t).max(0.0)).fold(0.0, f64::max);
                neg.max((x.sum() - 1.0).abs())
            }
            ProjectionOp::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(t, (l, u))| (l - t).max(t - u).max(0.0))
                .fold(0.0, f64::max),
        }
    }
}

/// Euclidean projection onto the probability simplex by the sorted-threshold
/// rule.
pub fn project_simplex(z: &DVector<f64>) -> DVector<f64> {
    let n = z.len();
    if n == 0 {
        return z.clone();
    }
    let mut u: Vec<f64> = z.iter().cloned().collect();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    z.map(|t| (t - theta).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn orthant_clamps() {
        assert_eq!(
            ProjectionOp::Orthant.project(&v(&[-1.0, 2.0])),
            v(&[0.0, 2.0])
        );
    }

    #[test]
    fn simplex_feasible_point_is_fixed() {
        assert_eq!(
            ProjectionOp::Simplex.project(&v(&[0.5, 0.5])),
            v(&[0.5, 0.5])
        );
    }

    #[test]
    fn simplex_matches_grid_oracle() {
        // brute force over Δ₂ parameterized by x₁ ∈ [0,1]
        let z = v(&[2.0, 0.0]);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=100_000 {
            let t = i as f64 / 100_000.0;
            let d = (t - z[0]).powi(2) + (1.0 - t - z[1]).powi(2);
            if d < best.0 {
                best = (d, t);
            }
        }
        assert_eq!(best.1, 1.0);
        assert_eq!(ProjectionOp::Simplex.project(&z), v(&[1.0, 0.0]));
    }

    fn ops(n: usize) -> Vec<ProjectionOp> {
        vec![
            ProjectionOp::Orthant,
            ProjectionOp::Simplex,
            ProjectionOp::boxed(
                DVector::from_element(n, -0.5),
                DVector::from_element(n, 2.0),
            )
            .unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn idempotent_and_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 1..12),
            seed in proptest::collection::vec(-5.0f64..5.0, 12),
        ) {
            let n = a.len();
            let za = DVector::from_vec(a);
            let zb = DVector::from_vec(seed[..n].to_vec());
            for op in ops(n) {
                let pa = op.project(&za);
                prop_assert!((op.project(&pa) - &pa).amax() <= 1e-12);
                let pb = op.project(&zb);
                prop_assert!((&pa - &pb).norm() <= (&za - &zb).norm() + 1e-12);
                prop_assert!(op.infeasibility(&pa) <= 1e-12);
            }
        }
    }
}
