//! Adam, conjugate gradients, and the two proximal maps used by the solvers.

mod adam;
mod cg;
mod prox;

pub use adam::{AdamConfig, AdamState};
pub use cg::{cg_solve, CgError, CgOptions, CgReport};
pub use prox::{project_linf_ball, soft_threshold, soft_threshold_scalar};
