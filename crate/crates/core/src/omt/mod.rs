//! Dynamic optimal mass transport on a staggered space-time grid.

mod interaction;
mod poisson;
mod projection;
mod prox;
mod solver;
mod spacetime;

pub use interaction::interaction_field;
pub use projection::{project_continuity, ContinuityProjector};
pub use prox::prox_energy;
pub use solver::{sampling_operator_norm, solve_bb, velocity_at, ConvergenceRecord, InteractionMode, OmtParams, OmtSolution};
pub use spacetime::SpaceTimeField;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OmtError {
    #[error("masses differ: {mass0} vs {mass1}")]
    MassMismatch { mass0: f64, mass1: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("densities live on different grids")]
    GridMismatch,
    #[error("Poisson solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    PoissonNonConvergence { iterations: usize, residual: f64 },
}
