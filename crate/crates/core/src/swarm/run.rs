use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{ise, lyapunov, speed_stats, MetricsLog, MetricsRow};
use crate::field::ScalarField;
use crate::kde::{estimate_on_grid, StateDependentKde};
use crate::kernelopt::KernelND;

use super::control::{step, ControlConfig};
use super::{sample_initial, InteractionWeight, SwarmError, SwarmState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimulationParams {
    pub n: usize,
    pub dt: f64,
    pub end_time: f64,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl SimulationParams {
    pub fn steps(&self) -> usize {
        (self.end_time / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SwarmError> {
        if self.n == 0 {
            return Err(SwarmError::InvalidParams("n must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.end_time >= 0.0 && self.end_time.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("endTime must be >= 0, got {}", self.end_time)));
        }
        if self.snapshot_every == 0 {
            return Err(SwarmError::InvalidParams("snapshotEvery must be positive".into()));
        }
        Ok(())
    }
}

/// Kernel and bandwidth of the global density estimate used for metrics.
/// Metrics live on the target's grid.
#[derive(Debug, Clone)]
pub struct DiagnosticsView {
    pub kernel: KernelND,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub positions: Vec<f64>,
    pub controls: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub initial: SwarmState,
    pub last: SwarmState,
    pub snapshots: Vec<Snapshot>,
    pub metrics: MetricsLog,
    /// Global estimate at the end time.
    pub final_estimate: ScalarField,
}

impl SimulationOutput {
    /// One row per agent and snapshot: step, time, id, positions, controls.
    pub fn write_trajectory_csv(&self, path: &Path) -> std::io::Result<()> {
        let d = self.last.rank();
        let axes = ["x", "y", "z"];
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["step".to_string(), "time".into(), "agent".into()];
        header.extend(axes[..d].iter().map(|a| a.to_string()));
        header.extend(axes[..d].iter().map(|a| format!("u{a}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.snapshots {
            for i in 0..s.positions.len() / d {
                write!(out, "{},{},{}", s.step, s.time, i)?;
                for v in &s.positions[i * d..(i + 1) * d] {
                    write!(out, ",{v}")?;
                }
                for v in &s.controls[i * d..(i + 1) * d] {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        out.flush()
    }
}

fn record(state: &SwarmState, step: usize, cfg: &ControlConfig, view: &DiagnosticsView, log: &mut MetricsLog) -> Result<ScalarField, SwarmError> {
    let estimate = estimate_on_grid(state, cfg.target.grid(), &view.kernel, view.h);
    let (max_speed, mean_speed) = speed_stats(state);
    let row = MetricsRow {
        time: state.time(),
        lyapunov: lyapunov(&estimate, cfg.target)?,
        error_l2: ise(&estimate, cfg.target)?.sqrt(),
        total_mass_estimate: estimate.quadrature(),
        max_speed,
        mean_speed,
    };
    log.push(row)
        .map_err(|e| SwarmError::InvalidParams(format!("step {step}: {e}")))?;
    Ok(estimate)
}

fn snapshot(state: &SwarmState, step: usize) -> Snapshot {
    Snapshot {
        step,
        time: state.time(),
        positions: state.positions().to_vec(),
        controls: state.controls.clone(),
    }
}

/// Samples `n` agents from `rho0` and integrates to `end_time`, recording
/// metrics every step and snapshots every `snapshot_every` steps (and at the
/// end).
pub fn run(
    rho0: &ScalarField,
    weight: &InteractionWeight,
    cfg: &ControlConfig,
    kde: &StateDependentKde,
    params: &SimulationParams,
    view: &DiagnosticsView,
) -> Result<SimulationOutput, SwarmError> {
    params.validate()?;
    let initial = sample_initial(rho0, params.n, params.seed, weight)?;
    run_from(initial, cfg, kde, params, view)
}

pub fn run_from(
    initial: SwarmState,
    cfg: &ControlConfig,
    kde: &StateDependentKde,
    params: &SimulationParams,
    view: &DiagnosticsView,
) -> Result<SimulationOutput, SwarmError> {
    params.validate()?;
    let steps = params.steps();
    let mut metrics = MetricsLog::new();
    let mut snapshots = vec![snapshot(&initial, 0)];
    let mut estimate = record(&initial, 0, cfg, view, &mut metrics)?;
    let mut state = initial.clone();
    for k in 1..=steps {
        state = step(&state, params.dt, cfg, kde)?;
        state.time = k as f64 * params.dt;
        estimate = record(&state, k, cfg, view, &mut metrics)?;
        if k % params.snapshot_every == 0 || k == steps {
            snapshots.push(snapshot(&state, k));
        }
    }
    Ok(SimulationOutput {
        initial,
        last: state,
        snapshots,
        metrics,
        final_estimate: estimate,
    })
}
