//! Reference methods: projected gradient with momentum, projected
//! Barzilai–Borwein, multiplicative updates, entropic mirror descent, and two
//! feasible Stiefel schemes.

mod manifold;
mod projection;
mod vector;

pub use manifold::{rgd_qr, wen_yin_cayley};
pub use projection::{project_simplex, ProjectionOp};
pub use vector::{
    entropic_mirror_descent, multiplicative_updates_nnls, pgd_nesterov, projected_bb, EmdStep,
};
