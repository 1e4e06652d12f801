use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{ScalarField, VectorField};

use super::projection::ContinuityProjector;
use super::prox::prox_scalar;
use super::spacetime::{axis_split, lower_face};
use super::{OmtError, SpaceTimeField};

const MASS_TOLERANCE: f64 = 1e-6;
const POWER_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    #[default]
    Off,
    Compensate,
}

/// Primal-dual solver settings. Unset step sizes default to `0.99 / ||K||`,
/// unset `rho_floor` to `1e-6 * max(rho0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OmtParams {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub step_primal: Option<f64>,
    #[serde(default)]
    pub step_dual: Option<f64>,
    #[serde(default)]
    pub rho_floor: Option<f64>,
    #[serde(default)]
    pub interaction_mode: InteractionMode,
}

fn default_max_iterations() -> usize {
    20000
}

fn default_tolerance() -> f64 {
    1e-4
}

impl Default for OmtParams {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            step_primal: None,
            step_dual: None,
            rho_floor: None,
            interaction_mode: InteractionMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct OmtSolution {
    pub field: SpaceTimeField,
    /// One velocity field per half time level.
    pub velocity: Vec<VectorField>,
    pub energy: f64,
    /// Relative continuity residual of the returned field.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<ConvergenceRecord>,
    pub rho_floor: f64,
}

impl OmtSolution {
    pub fn time_steps(&self) -> usize {
        self.field.time_steps()
    }

    /// Velocity at `point` and time `t` in `[0, 1]`; see [`velocity_at`].
    pub fn velocity_at(&self, point: &[f64], t: f64, out: &mut [f64]) {
        velocity_at(&self.velocity, point, t, out)
    }

    pub fn write_convergence_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,energy,residual")?;
        for r in &self.log {
            writeln!(f, "{},{:e},{:e}", r.iteration, r.energy, r.residual)?;
        }
        f.flush()
    }
}

const SUM_CHUNK: usize = 4096;

/// Sum with a fixed chunking, so the result does not depend on the thread
/// count.
pub(crate) fn ordered_sum(v: &[f64]) -> f64 {
    v.par_chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// `(|a - b|^2, |b|^2)` with the same fixed chunking.
fn change_and_size(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.par_chunks(SUM_CHUNK)
        .zip(b.par_chunks(SUM_CHUNK))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .fold((0.0, 0.0), |acc, (p, q)| (acc.0 + (p - q) * (p - q), acc.1 + q * q))
        })
        .collect::<Vec<_>>()
        .iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1))
}

/// Velocity from half-level slices at `point` and time `t` in `[0, 1]`,
/// linear in time between slices and constant outside them.
pub fn velocity_at(slices: &[VectorField], point: &[f64], t: f64, out: &mut [f64]) {
    let steps = slices.len();
    let s = (t * steps as f64 - 0.5).clamp(0.0, (steps - 1) as f64);
    let k0 = (s.floor() as usize).min(steps.saturating_sub(2));
    let w = if steps == 1 { 0.0 } else { s - k0 as f64 };
    let rank = slices[0].grid().rank();
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    slices[k0].interpolate_into(point, &mut a[..rank]);
    if w > 0.0 {
        slices[k0 + 1].interpolate_into(point, &mut b[..rank]);
    }
    for axis in 0..rank {
        out[axis] = (1.0 - w) * a[axis] + w * b[axis];
    }
}

/// The linear map `I` from a space-time field to per-cell, per-half-level
/// samples: density averaged in time, momentum averaged from the two faces of
/// the cell along each axis.
struct Sampling {
    rank: usize,
    cells: usize,
    time_steps: usize,
    /// `(n, inner)` per axis
    splits: Vec<(usize, usize)>,
}

impl Sampling {
    fn new(field: &SpaceTimeField) -> Self {
        let grid = field.grid();
        Self {
            rank: grid.rank(),
            cells: grid.len(),
            time_steps: field.time_steps(),
            splits: (0..grid.rank())
                .map(|a| {
                    let (_, n, inner) = axis_split(grid, a);
                    (n, inner)
                })
                .collect(),
        }
    }

    fn width(&self) -> usize {
        self.rank
    }

    fn forward(&self, u: &SpaceTimeField, zr: &mut [f64], zm: &mut [f64]) {
        let n = self.cells;
        let w = self.width();
        zr.par_chunks_mut(n)
            .zip(zm.par_chunks_mut(n * w))
            .enumerate()
            .for_each(|(k, (zr, zm))| {
                for ((z, a), b) in zr.iter_mut().zip(u.rho_level(k)).zip(u.rho_level(k + 1)) {
                    *z = 0.5 * (a + b);
                }
                for (axis, &(len, inner)) in self.splits.iter().enumerate() {
                    let faces = u.momentum_component(k, axis);
                    for c in 0..n {
                        let lo = lower_face(c, len, inner);
                        zm[c * w + axis] = 0.5 * (faces[lo] + faces[lo + inner]);
                    }
                }
            });
    }

    /// `out = I^T z` on the free variables; the end density levels are zeroed.
    fn adjoint(&self, zr: &[f64], zm: &[f64], out: &mut SpaceTimeField) {
        let n = self.cells;
        let w = self.width();
        let t = self.time_steps;
        out.rho_level_mut(0).iter_mut().for_each(|v| *v = 0.0);
        out.rho_level_mut(t).iter_mut().for_each(|v| *v = 0.0);
        for j in 1..t {
            let (ya, yb) = (&zr[(j - 1) * n..j * n], &zr[j * n..(j + 1) * n]);
            for ((dst, a), b) in out.rho_level_mut(j).iter_mut().zip(ya).zip(yb) {
                *dst = 0.5 * (a + b);
            }
        }
        let block = out.momentum_block();
        let offsets = out.offsets().to_vec();
        out.momentum_mut()
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(k, level)| {
                level.iter_mut().for_each(|v| *v = 0.0);
                let zk = &zm[k * n * w..(k + 1) * n * w];
                for (axis, &(len, inner)) in self.splits.iter().enumerate() {
                    let faces = &mut level[offsets[axis]..offsets[axis + 1]];
                    for c in 0..n {
                        let lo = lower_face(c, len, inner);
                        let half = 0.5 * zk[c * w + axis];
                        faces[lo] += half;
                        faces[lo + inner] += half;
                    }
                }
            });
    }
}

/// Largest singular value of the sampling operator `I` on the free variables,
/// by power iteration from a fixed random start.
pub fn sampling_operator_norm(grid: &crate::field::GridSpec, time_steps: usize) -> Result<f64, OmtError> {
    let mut x = SpaceTimeField::zeros(grid.clone(), time_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n = grid.len();
    for j in 1..time_steps {
        x.rho_level_mut(j).iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    x.momentum_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let sampling = Sampling::new(&x);
    let mut zr = vec![0.0; time_steps * n];
    let mut zm = vec![0.0; time_steps * n * sampling.width()];
    let mut y = x.clone();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        sampling.forward(&x, &mut zr, &mut zm);
        sampling.adjoint(&zr, &zm, &mut y);
        let nrm = y.rho().iter().chain(y.momentum()).map(|v| v * v).sum::<f64>().sqrt();
        let xn = x.rho().iter().chain(x.momentum()).map(|v| v * v).sum::<f64>().sqrt();
        lambda = nrm / xn;
        std::mem::swap(&mut x, &mut y);
    }
    Ok(lambda.sqrt())
}

fn check_density(name: &str, rho: &ScalarField) -> Result<f64, OmtError> {
    if rho.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(OmtError::InvalidDensity(format!("{name} has negative or non-finite values")));
    }
    let mass = rho.quadrature();
    if !(mass > 0.0) {
        return Err(OmtError::InvalidDensity(format!("{name} has zero mass")));
    }
    Ok(mass)
}

/// Benamou-Brenier transport between `rho0` and `rho1` over a unit horizon
/// with `time_steps` steps, by Chambolle-Pock iterations on
/// `min F(I U) + indicator(continuity)(U)`, where `I` samples the field per
/// cell and half level and `F` is the per-cell kinetic energy.
pub fn solve_bb(
    rho0: &ScalarField,
    rho1: &ScalarField,
    time_steps: usize,
    params: &OmtParams,
) -> Result<OmtSolution, OmtError> {
    if rho0.grid() != rho1.grid() {
        return Err(OmtError::GridMismatch);
    }
    if time_steps < 2 {
        return Err(OmtError::InvalidParams(format!("need at least 2 time steps, got {time_steps}")));
    }
    if !(params.tolerance > 0.0) || params.max_iterations == 0 {
        return Err(OmtError::InvalidParams("tolerance and maxIterations must be positive".into()));
    }
    let m0 = check_density("rho0", rho0)?;
    let m1 = check_density("rho1", rho1)?;
    if (m0 - m1).abs() > MASS_TOLERANCE * m0.max(m1) {
        return Err(OmtError::MassMismatch { mass0: m0, mass1: m1 });
    }
    let mass = m0;
    let grid = rho0.grid().clone();
    let n = grid.len();

    let op_norm = sampling_operator_norm(&grid, time_steps)?;
    let tau = params.step_primal.unwrap_or(0.99 / op_norm);
    let sigma = params.step_dual.unwrap_or(0.99 / op_norm);
    if !(tau > 0.0 && sigma > 0.0) || tau * sigma * op_norm * op_norm >= 1.0 {
        return Err(OmtError::InvalidParams(format!(
            "step sizes violate tau*sigma*||K||^2 < 1 (tau={tau}, sigma={sigma}, ||K||={op_norm:.6})"
        )));
    }

    let r0: Vec<f64> = rho0.values().iter().map(|v| v / m0).collect();
    let r1: Vec<f64> = rho1.values().iter().map(|v| v / m1).collect();
    let max0 = r0.iter().cloned().fold(0.0, f64::max);
    let floor = match params.rho_floor {
        Some(f) if f > 0.0 => f / mass,
        Some(f) => return Err(OmtError::InvalidParams(format!("rhoFloor must be positive, got {f}"))),
        None => 1e-6 * max0,
    };

    let projector = ContinuityProjector::new(&grid, time_steps);
    let r0f = ScalarField::new(grid.clone(), r0.clone()).expect("grid length");
    let r1f = ScalarField::new(grid.clone(), r1.clone()).expect("grid length");
    let mut u = SpaceTimeField::linear_interpolation(&r0f, &r1f, time_steps)?;
    projector.project(&mut u, &r0, &r1)?;

    let sampling = Sampling::new(&u);
    let w = sampling.width();
    let mut u_bar = u.clone();
    let mut next = u.clone();
    let mut step = u.clone();
    let mut y_rho = vec![0.0; time_steps * n];
    let mut y_m = vec![0.0; time_steps * n * w];
    let mut z_rho = vec![0.0; time_steps * n];
    let mut z_m = vec![0.0; time_steps * n * w];
    let mut gap_buf = vec![0.0; time_steps * n];
    let mut log = Vec::new();
    let mut best = u.clone();
    let mut best_residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=params.max_iterations {
        iterations = iter;
        // Dual ascent through the prox of the conjugate (Moreau); z_* holds
        // I(u_bar) on entry.
        sampling.forward(&u_bar, &mut z_rho, &mut z_m);
        y_rho
            .par_iter_mut()
            .zip(gap_buf.par_iter_mut())
            .zip(y_m.par_chunks_mut(w))
            .zip(z_rho.par_iter())
            .zip(z_m.par_chunks(w))
            .for_each(|((((yr, gap_out), ym), zr), zm)| {
                let yr_i = *yr + sigma * zr;
                let mut ym_i = [0.0; 3];
                let mut m2 = 0.0;
                for a in 0..w {
                    ym_i[a] = ym[a] + sigma * zm[a];
                    m2 += (ym_i[a] / sigma).powi(2);
                }
                let (pr, s) = prox_scalar(yr_i / sigma, m2, 1.0 / sigma);
                *yr = yr_i - sigma * pr;
                let mut gap = (pr - zr).powi(2);
                for a in 0..w {
                    let pm = s * ym_i[a] / sigma;
                    ym[a] = ym_i[a] - sigma * pm;
                    gap += (pm - zm[a]).powi(2);
                }
                *gap_out = gap;
            });
        let gap2 = ordered_sum(&gap_buf);

        // Primal descent and projection onto the continuity constraint.
        sampling.adjoint(&y_rho, &y_m, &mut step);
        next.rho_mut()
            .par_iter_mut()
            .zip(u.rho())
            .zip(step.rho())
            .for_each(|((dst, s), g)| *dst = s - tau * g);
        next.momentum_mut()
            .par_iter_mut()
            .zip(u.momentum())
            .zip(step.momentum())
            .for_each(|((dst, s), g)| *dst = s - tau * g);
        projector.project(&mut next, &r0, &r1)?;

        let (c_rho, s_rho) = change_and_size(next.rho(), u.rho());
        let (c_m, s_m) = change_and_size(next.momentum(), u.momentum());
        let (change2, size2) = (c_rho + c_m, s_rho + s_m);
        u_bar
            .rho_mut()
            .par_iter_mut()
            .zip(next.rho())
            .zip(u.rho())
            .for_each(|((bar, a), b)| *bar = 2.0 * a - b);
        u_bar
            .momentum_mut()
            .par_iter_mut()
            .zip(next.momentum())
            .zip(u.momentum())
            .for_each(|((bar, a), b)| *bar = 2.0 * a - b);
        std::mem::swap(&mut u, &mut next);

        let residual = gap2.sqrt().max(change2.sqrt()) / size2.sqrt().max(f64::MIN_POSITIVE);
        let energy = u.bb_energy(floor) * mass;
        log.push(ConvergenceRecord {
            iteration: iter,
            energy,
            residual,
        });
        if residual < best_residual {
            best_residual = residual;
            best.clone_from(&u);
        }
        if residual <= params.tolerance {
            converged = true;
            break;
        }
    }

    let mut field = if converged {
        u
    } else {
        best
    };
    let velocity = field.velocities(floor);
    let energy = field.bb_energy(floor) * mass;
    field.scale(mass);
    let residual = field.continuity_residual();
    Ok(OmtSolution {
        field,
        velocity,
        energy,
        residual,
        iterations,
        converged,
        log,
        rho_floor: floor * mass,
    })
}
