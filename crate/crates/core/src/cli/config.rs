use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::field::GridSpec;
use crate::kde::BandwidthRule;
use crate::kernelopt::Exclusion;
use crate::omt::OmtParams;
use crate::swarm::ConsensusSign;

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
    #[serde(default)]
    pub omt: OmtParams,
    pub rho0: DensitySpec,
    pub rho1: DensitySpec,
    #[serde(default)]
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: BandwidthRule,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GridConfig {
    pub dims: Vec<usize>,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
    pub extent: Vec<f64>,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec, CliError> {
        let origin = self.origin.clone().unwrap_or_else(|| vec![0.0; self.dims.len()]);
        GridSpec::new(self.dims.clone(), origin, self.extent.clone())
            .map_err(|e| CliError::Schema(format!("grid: {e}")))
    }
}

/// Analytic density builders. Every builder is normalized to unit mass on
/// the box before `weight` is applied; the final density is renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum DensitySpec {
    #[serde(rename_all = "camelCase")]
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
        #[serde(default = "one")]
        weight: f64,
    },
    #[serde(rename_all = "camelCase")]
    Ring {
        center: Vec<f64>,
        ring_radius: f64,
        count: usize,
        sigma: f64,
        #[serde(default = "one")]
        weight: f64,
    },
    Uniform {
        #[serde(default = "one")]
        weight: f64,
    },
    Mixture { components: Vec<DensitySpec> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub n: usize,
    pub radius: f64,
    pub alpha: f64,
    pub dt: f64,
    pub end_time: f64,
    pub switch_time: f64,
    pub seed: u64,
    pub compensation: bool,
    pub rho_floor_frac: f64,
    pub sign: ConsensusSign,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n: 200,
            radius: 0.01,
            alpha: 1e-4,
            dt: 1e-3,
            end_time: 2.0,
            switch_time: 1.0,
            seed: 1,
            compensation: false,
            rho_floor_frac: 0.1,
            sign: ConsensusSign::Attractive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Kernel standard deviation (second moment `a^2`).
    pub a: f64,
    pub grid_half_width: f64,
    pub nodes: usize,
    pub exclusion: Exclusion,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            a: 5f64.powf(-0.5),
            grid_half_width: 2.0,
            nodes: 201,
            exclusion: Exclusion::default(),
        }
    }
}

/// Global estimate used for metrics and renders. Without an explicit
/// bandwidth, `h = 2.34 * sigma0 * N^(-1/5)` from the spread of the
/// initial positions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_every: usize,
    /// Density levels of the OMT solution rendered to PGM.
    pub render_levels: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_every: 100,
            render_levels: 5,
        }
    }
}

fn default_time_steps() -> usize {
    64
}

fn default_bandwidth() -> BandwidthRule {
    BandwidthRule { c: 0.019, exponent: 0.2 }
}

fn one() -> f64 {
    1.0
}

fn schema(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(key, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => CliError::Schema(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Range checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid.spec()?;
        if self.time_steps < 2 {
            return Err(schema("timeSteps", "must be at least 2"));
        }
        positive("omt.tolerance", self.omt.tolerance)?;
        if self.omt.max_iterations == 0 {
            return Err(schema("omt.maxIterations", "must be positive"));
        }
        for (key, v) in [("omt.stepPrimal", self.omt.step_primal), ("omt.stepDual", self.omt.step_dual), ("omt.rhoFloor", self.omt.rho_floor)] {
            if let Some(v) = v {
                positive(key, v)?;
            }
        }
        validate_density("rho0", &self.rho0, grid.rank())?;
        validate_density("rho1", &self.rho1, grid.rank())?;

        let s = &self.swarm;
        if s.n == 0 {
            return Err(schema("swarm.n", "must be positive"));
        }
        if !(s.radius >= 0.0 && s.radius.is_finite()) {
            return Err(schema("swarm.radius", format!("must be >= 0, got {}", s.radius)));
        }
        if !(s.alpha >= 0.0 && s.alpha.is_finite()) {
            return Err(schema("alpha", format!("swarm.alpha must be >= 0, got {}", s.alpha)));
        }
        positive("swarm.dt", s.dt)?;
        if !(s.end_time >= 0.0 && s.end_time.is_finite()) {
            return Err(schema("swarm.endTime", format!("must be >= 0, got {}", s.end_time)));
        }
        positive("swarm.switchTime", s.switch_time)?;
        positive("swarm.rhoFloorFrac", s.rho_floor_frac)?;

        let k = &self.kernel;
        positive("kernel.a", k.a)?;
        positive("kernel.gridHalfWidth", k.grid_half_width)?;
        if k.nodes < 3 {
            return Err(schema("kernel.nodes", "must be at least 3"));
        }
        BandwidthRule::new(self.bandwidth.c, self.bandwidth.exponent).map_err(|e| schema("bandwidth", e))?;
        if let Some(h) = self.diagnostics.bandwidth {
            positive("diagnostics.bandwidth", h)?;
        }
        if self.output.snapshot_every == 0 {
            return Err(schema("output.snapshotEvery", "must be positive"));
        }
        Ok(())
    }

    /// Makes relative density file paths absolute against `base`.
    fn resolve_paths(&mut self, base: &Path) {
        fn walk(spec: &mut DensitySpec, base: &Path) {
            match spec {
                DensitySpec::File { path } if path.is_relative() => *path = base.join(&*path),
                DensitySpec::Mixture { components } => components.iter_mut().for_each(|c| walk(c, base)),
                _ => {}
            }
        }
        walk(&mut self.rho0, base);
        walk(&mut self.rho1, base);
    }
}

fn validate_density(key: &str, spec: &DensitySpec, rank: usize) -> Result<(), CliError> {
    let check_weight = |w: f64| positive(&format!("{key}.weight"), w);
    match spec {
        DensitySpec::Gaussian { center, sigma, weight } => {
            if center.len() != rank {
                return Err(schema(&format!("{key}.center"), format!("needs {rank} coordinates")));
            }
            positive(&format!("{key}.sigma"), *sigma)?;
            check_weight(*weight)
        }
        DensitySpec::Ring { center, ring_radius, count, sigma, weight } => {
            if rank != 2 {
                return Err(schema(key, "ring densities need a 2D grid"));
            }
            if center.len() != 2 {
                return Err(schema(&format!("{key}.center"), "needs 2 coordinates"));
            }
            positive(&format!("{key}.ringRadius"), *ring_radius)?;
            positive(&format!("{key}.sigma"), *sigma)?;
            if *count == 0 {
                return Err(schema(&format!("{key}.count"), "must be positive"));
            }
            check_weight(*weight)
        }
        DensitySpec::Uniform { weight } => check_weight(*weight),
        DensitySpec::Mixture { components } => {
            if components.is_empty() {
                return Err(schema(&format!("{key}.components"), "must not be empty"));
            }
            components.iter().try_for_each(|c| validate_density(key, c, rank))
        }
        DensitySpec::File { path } => {
            if path.is_file() {
                Ok(())
            } else {
                Err(schema(&format!("{key}.path"), format!("{} does not exist", path.display())))
            }
        }
    }
}

/// Reads and validates a config; relative density paths are taken from the
/// config's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => CliError::Schema(format!("{}: {e}", path.display())),
        _ => CliError::Parse(format!("{}: {e}", path.display())),
    })?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}
