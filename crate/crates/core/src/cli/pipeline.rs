use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::field::io::{read_field, write_field};
use crate::field::{ScalarField, VectorField};
use crate::kde::{bandwidth, estimate_on_grid, StateDependentKde};
use crate::kernelopt::{amise_c1, default_grid, epanechnikov, optimize_kernel_nd, KernelND};
use crate::omt::{solve_bb, OmtSolution};
use crate::swarm::{run_from, sample_initial, ControlConfig, DiagnosticsView, InteractionWeight, SimulationOutput, SimulationParams, SwarmState};

use super::density::build_density;
use super::render::{render_overlay_ppm, render_pgm};
use super::{CliError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SolveOmt,
    OptimizeKernel,
    Simulate,
}

#[derive(Debug, Clone)]
pub struct StageOptions {
    pub out: PathBuf,
    pub quiet: bool,
}

impl StageOptions {
    fn note(&self, stage: Stage, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("[{stage:?}] {}", msg.as_ref());
        }
    }

    fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.out.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    }
}

pub fn write_resolved_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("resolved-config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OmtSummary {
    energy: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
    time_steps: usize,
    rho_floor: f64,
}

fn level_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("rho_{k:03}.field"))
}

fn velocity_path(dir: &Path, k: usize, axis: usize) -> PathBuf {
    dir.join(format!("velocity_{k:03}_{axis}.field"))
}

/// Solves the transport problem and writes density levels, velocity slices,
/// the convergence log and renders under `omt/`.
pub fn solve_omt(cfg: &RunConfig, opts: &StageOptions) -> Result<OmtSolution, CliError> {
    let grid = cfg.grid.spec()?;
    let rho0 = build_density(&cfg.rho0, &grid)?;
    let rho1 = build_density(&cfg.rho1, &grid)?;
    opts.note(Stage::SolveOmt, format!("{:?} cells x {} steps", grid.dims(), cfg.time_steps));
    let sol = solve_bb(&rho0, &rho1, cfg.time_steps, &cfg.omt)?;
    opts.note(
        Stage::SolveOmt,
        format!(
            "{} after {} iterations, energy {:.6}, residual {:.2e}",
            if sol.converged { "converged" } else { "not converged" },
            sol.iterations,
            sol.energy,
            sol.residual
        ),
    );

    let dir = opts.dir("omt")?;
    let steps = sol.time_steps();
    for k in 0..=steps {
        write_field(&level_path(&dir, k), &sol.field.density(k))?;
    }
    for (k, v) in sol.velocity.iter().enumerate() {
        for axis in 0..grid.rank() {
            let f = ScalarField::new(grid.clone(), v.component(axis).to_vec())?;
            write_field(&velocity_path(&dir, k, axis), &f)?;
        }
    }
    sol.write_convergence_csv(&dir.join("convergence.csv"))?;
    if grid.rank() <= 2 && cfg.output.render_levels > 0 {
        let levels = cfg.output.render_levels.min(steps + 1);
        for j in 0..levels {
            let k = if levels == 1 { 0 } else { j * steps / (levels - 1) };
            render_pgm(&sol.field.density(k), &dir.join(format!("rho_{k:03}.pgm")))?;
        }
    }
    // written last: its presence marks a complete artifact set
    write_json(
        &dir.join("summary.json"),
        &OmtSummary {
            energy: sol.energy,
            residual: sol.residual,
            iterations: sol.iterations,
            converged: sol.converged,
            time_steps: steps,
            rho_floor: sol.rho_floor,
        },
    )?;
    Ok(sol)
}

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(path))
    }
}

/// Velocity slices written by [`solve_omt`].
pub fn load_feedforward(cfg: &RunConfig, out: &Path) -> Result<Vec<VectorField>, CliError> {
    let grid = cfg.grid.spec()?;
    let dir = out.join("omt");
    require(dir.join("summary.json"))?;
    let mut slices = Vec::with_capacity(cfg.time_steps);
    for k in 0..cfg.time_steps {
        let mut components = Vec::with_capacity(grid.rank());
        for axis in 0..grid.rank() {
            let f = read_field(&require(velocity_path(&dir, k, axis))?)?;
            if f.grid() != &grid {
                return Err(CliError::Schema(format!("omt artifacts were computed on a different grid than {:?}", grid.dims())));
            }
            components.push(f.into_values());
        }
        slices.push(VectorField::new(grid.clone(), components)?);
    }
    Ok(slices)
}

/// The separable kernel used by the agents.
fn agent_kernel(cfg: &RunConfig) -> Result<KernelND, CliError> {
    let k = &cfg.kernel;
    let grid = crate::field::GridSpec::symmetric_nodes(k.grid_half_width, k.nodes)?;
    let rank = cfg.grid.dims.len();
    Ok(optimize_kernel_nd(&vec![grid; rank], k.a, &k.exclusion)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct KernelSummary {
    a: f64,
    c1: Vec<f64>,
    roughness: Vec<f64>,
    epanechnikov_c1: Option<f64>,
}

/// Optimal kernel factors as CSV plus their AMISE constants.
pub fn optimize_kernel(cfg: &RunConfig, opts: &StageOptions) -> Result<KernelND, CliError> {
    let kernel = agent_kernel(cfg)?;
    let dir = opts.dir("kernel")?;
    for (axis, f) in kernel.factors().iter().enumerate() {
        f.write_csv(&dir.join(format!("kernel_axis{axis}.csv")))?;
    }
    let reference = epanechnikov(cfg.kernel.a, kernel.factors()[0].grid()).ok();
    if let Some(e) = &reference {
        e.write_csv(&dir.join("epanechnikov.csv"))?;
    }
    let summary = KernelSummary {
        a: cfg.kernel.a,
        c1: kernel.factors().iter().map(amise_c1).collect(),
        roughness: kernel.factors().iter().map(|f| f.roughness()).collect(),
        epanechnikov_c1: reference.as_ref().map(amise_c1),
    };
    opts.note(Stage::OptimizeKernel, format!("C1 per axis {:?}", summary.c1));
    write_json(&dir.join("c1.json"), &summary)?;
    Ok(kernel)
}

/// `2.34 * sigma0 * N^(-1/5)` for the unit-support Epanechnikov kernel, with
/// `sigma0` the root mean per-axis variance of the positions.
pub fn diagnostics_bandwidth(state: &SwarmState) -> f64 {
    let n = state.len() as f64;
    let d = state.rank();
    let mut var = 0.0;
    for k in 0..d {
        let mean = (0..state.len()).map(|i| state.position(i)[k]).sum::<f64>() / n;
        var += (0..state.len()).map(|i| (state.position(i)[k] - mean).powi(2)).sum::<f64>() / n;
    }
    2.34 * (var / d as f64).sqrt() * n.powf(-0.2)
}

/// Runs the agents with the given feedforward and gain, without writing
/// anything.
pub fn simulate_with(cfg: &RunConfig, feedforward: Option<&[VectorField]>, alpha: f64) -> Result<SimulationOutput, CliError> {
    let grid = cfg.grid.spec()?;
    let rho0 = build_density(&cfg.rho0, &grid)?;
    let rho1 = build_density(&cfg.rho1, &grid)?;
    let s = &cfg.swarm;
    let weight = InteractionWeight::proximity(s.radius);

    let kernel = agent_kernel(cfg)?;
    let h = bandwidth(&cfg.bandwidth, s.n);
    // without interaction nobody is sampled, so any support is admissible
    let bound = if s.radius > 0.0 { s.radius } else { f64::INFINITY };
    let kde = StateDependentKde::new(kernel, h, bound)?;

    let control = ControlConfig::new(alpha, s.switch_time, feedforward, &rho1)?
        .with_rho_floor_frac(s.rho_floor_frac)?
        .with_compensation(s.compensation)
        .with_sign(s.sign);

    let initial = sample_initial(&rho0, s.n, s.seed, &weight)?;
    let unit = 5f64.powf(-0.5);
    let view = DiagnosticsView {
        kernel: KernelND::isotropic(epanechnikov(unit, &default_grid(unit, 201)?)?, grid.rank()),
        h: cfg.diagnostics.bandwidth.unwrap_or_else(|| diagnostics_bandwidth(&initial)),
    };
    let params = SimulationParams {
        n: s.n,
        dt: s.dt,
        end_time: s.end_time,
        snapshot_every: cfg.output.snapshot_every,
        seed: s.seed,
    };
    Ok(run_from(initial, &control, &kde, &params, &view)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SimulationSummary {
    steps: usize,
    agent_bandwidth: f64,
    final_ise: f64,
    final_lyapunov: f64,
}

/// Simulation against the cached transport solution; writes trajectories,
/// metrics, snapshot fields and renders under `sim/`.
pub fn simulate(cfg: &RunConfig, opts: &StageOptions) -> Result<SimulationOutput, CliError> {
    let feedforward = load_feedforward(cfg, &opts.out)?;
    opts.note(Stage::Simulate, format!("{} agents, alpha {}", cfg.swarm.n, cfg.swarm.alpha));
    let out = simulate_with(cfg, Some(&feedforward), cfg.swarm.alpha)?;

    let grid = cfg.grid.spec()?;
    let rho1 = build_density(&cfg.rho1, &grid)?;
    let dir = opts.dir("sim")?;
    let snaps = opts.dir("sim/snapshots")?;
    out.write_trajectory_csv(&dir.join("trajectory.csv"))?;
    out.metrics.write_csv(&dir.join("metrics.csv"))?;

    let h = cfg
        .diagnostics
        .bandwidth
        .unwrap_or_else(|| diagnostics_bandwidth(&out.initial));
    let unit = 5f64.powf(-0.5);
    let kernel = KernelND::isotropic(epanechnikov(unit, &default_grid(unit, 201)?)?, grid.rank());
    let weight = InteractionWeight::proximity(cfg.swarm.radius);
    let renderable = grid.rank() <= 2;
    for snap in &out.snapshots {
        let state = SwarmState::from_positions(grid.rank(), snap.positions.clone(), &weight, cfg.swarm.seed)?;
        let density = estimate_on_grid(&state, &grid, &kernel, h);
        let stem = format!("density_{:06}", snap.step);
        write_field(&snaps.join(format!("{stem}.field")), &density)?;
        if renderable {
            render_pgm(&density, &snaps.join(format!("{stem}.pgm")))?;
            render_overlay_ppm(&density, &snap.positions, &snaps.join(format!("agents_{:06}.ppm", snap.step)))?;
        }
    }
    write_field(&dir.join("final_density.field"), &out.final_estimate)?;
    if renderable {
        render_pgm(&out.final_estimate, &dir.join("final_density.pgm"))?;
        render_overlay_ppm(&out.final_estimate, out.last.positions(), &dir.join("final_agents.ppm"))?;
        render_pgm(&rho1, &dir.join("target.pgm"))?;
    }
    let last = out.metrics.rows().last().expect("at least the initial row");
    write_json(
        &dir.join("summary.json"),
        &SimulationSummary {
            steps: out.snapshots.last().map_or(0, |s| s.step),
            agent_bandwidth: bandwidth(&cfg.bandwidth, cfg.swarm.n),
            final_ise: last.error_l2 * last.error_l2,
            final_lyapunov: last.lyapunov,
        },
    )?;
    opts.note(Stage::Simulate, format!("final ISE {:.4e}, V {:.4e}", last.error_l2 * last.error_l2, last.lyapunov));
    Ok(out)
}
