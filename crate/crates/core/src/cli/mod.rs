//! Configuration, density builders, renders and the solve / kernel /
//! simulate stages behind the `swomt` binary.

mod config;
mod density;
mod pipeline;
mod render;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, DensitySpec, DiagnosticsConfig, GridConfig, KernelConfig, OutputConfig, RunConfig, SwarmConfig};
pub use density::build_density;
pub use pipeline::{
    diagnostics_bandwidth, load_feedforward, optimize_kernel, simulate, simulate_with, solve_omt, write_resolved_config,
    Stage, StageOptions,
};
pub use render::{render_overlay_ppm, render_pgm};

/// Exit codes of the binary; `2` is reserved for usage errors.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing artifact {}: run solve-omt first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("transport solver: {0}")]
    Omt(#[from] crate::omt::OmtError),
    #[error("kernel optimization: {0}")]
    Kernel(#[from] crate::kernelopt::KernelError),
    #[error("simulation: {0}")]
    Swarm(#[from] crate::swarm::SwarmError),
    #[error("density estimate: {0}")]
    Kde(#[from] crate::kde::KdeError),
    #[error("field: {0}")]
    Field(#[from] crate::field::FieldError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 3,
            CliError::Schema(_) => 4,
            CliError::MissingArtifact(_) => 5,
            CliError::Io(_) => 6,
            CliError::Omt(_) => 7,
            CliError::Kernel(_) => 8,
            CliError::Swarm(_) | CliError::Kde(_) => 9,
            CliError::Field(_) => 10,
        }
    }
}
