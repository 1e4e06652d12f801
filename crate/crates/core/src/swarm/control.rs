use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{ScalarField, VectorField, MAX_RANK};
use crate::kde::{DensityEstimate, StateDependentKde};
use crate::omt::velocity_at;

use super::{consensus_drift_into, SwarmError, SwarmState};

/// Orientation of the consensus term. `Attractive` is `(1/N) sum (x_j - x_i)`;
/// `Repulsive` flips it to `sum (x_i - x_j)`, which pushes neighbours apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusSign {
    #[default]
    Attractive,
    Repulsive,
}

impl ConsensusSign {
    fn factor(self) -> f64 {
        match self {
            ConsensusSign::Attractive => 1.0,
            ConsensusSign::Repulsive => -1.0,
        }
    }
}

/// Two-phase control law: feedforward plus feedback up to `switch_time`,
/// feedback with drift cancellation afterwards.
#[derive(Debug, Clone)]
pub struct ControlConfig<'a> {
    pub alpha: f64,
    pub switch_time: f64,
    pub rho_floor_frac: f64,
    /// Velocity slices at the half levels of `[0, 1]`.
    pub feedforward: Option<&'a [VectorField]>,
    pub target: &'a ScalarField,
    pub compensation: bool,
    pub sign: ConsensusSign,
    target_gradient: VectorField,
    floor: f64,
}

impl<'a> ControlConfig<'a> {
    pub fn new(
        alpha: f64,
        switch_time: f64,
        feedforward: Option<&'a [VectorField]>,
        target: &'a ScalarField,
    ) -> Result<Self, SwarmError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(switch_time > 0.0 && switch_time.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("switchTime must be positive, got {switch_time}")));
        }
        if let Some(ff) = feedforward {
            if ff.is_empty() || ff.iter().any(|v| v.grid().rank() != target.grid().rank()) {
                return Err(SwarmError::InvalidParams("feedforward slices missing or of the wrong rank".into()));
            }
        }
        let mut cfg = Self {
            alpha,
            switch_time,
            rho_floor_frac: 1e-3,
            feedforward,
            target,
            compensation: false,
            sign: ConsensusSign::Attractive,
            target_gradient: target.gradient(),
            floor: 0.0,
        };
        cfg.floor = cfg.rho_floor_frac * target.max();
        Ok(cfg)
    }

    pub fn with_rho_floor_frac(mut self, frac: f64) -> Result<Self, SwarmError> {
        if !(frac > 0.0 && frac.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("rhoFloorFrac must be positive, got {frac}")));
        }
        self.rho_floor_frac = frac;
        self.floor = frac * self.target.max();
        Ok(self)
    }

    pub fn with_compensation(mut self, on: bool) -> Self {
        self.compensation = on;
        self
    }

    pub fn with_sign(mut self, sign: ConsensusSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn target_gradient(&self) -> &VectorField {
        &self.target_gradient
    }

    /// Feedback denominator floor `rho_floor_frac * max(rho1)`.
    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// Control for agent `i` given its density estimate.
pub fn control_with_estimate(state: &SwarmState, i: usize, cfg: &ControlConfig, estimate: &DensityEstimate) -> Vec<f64> {
    let mut out = vec![0.0; state.rank()];
    control_into(state, i, cfg, estimate, &mut out);
    out
}

pub fn control(state: &SwarmState, i: usize, cfg: &ControlConfig, kde: &StateDependentKde) -> Vec<f64> {
    control_with_estimate(state, i, cfg, &kde.estimate(i, state))
}

fn control_into(state: &SwarmState, i: usize, cfg: &ControlConfig, estimate: &DensityEstimate, out: &mut [f64]) {
    let d = state.rank();
    let x = state.position(i);
    let t = state.time();
    let feedforward_phase = t <= cfg.switch_time;

    out.iter_mut().for_each(|v| *v = 0.0);
    if feedforward_phase {
        if let Some(ff) = cfg.feedforward {
            velocity_at(ff, x, t / cfg.switch_time, out);
            out.iter_mut().for_each(|v| *v /= cfg.switch_time);
        }
    }

    if cfg.alpha > 0.0 {
        let mut target_grad = [0.0; MAX_RANK];
        cfg.target_gradient.interpolate_into(x, &mut target_grad[..d]);
        let denom = estimate.value.max(cfg.floor);
        for k in 0..d {
            out[k] -= cfg.alpha * (estimate.gradient[k] - target_grad[k]) / denom;
        }
    }

    if !feedforward_phase || cfg.compensation {
        let mut drift = [0.0; MAX_RANK];
        consensus_drift_into(state, i, &mut drift[..d]);
        let s = cfg.sign.factor();
        for k in 0..d {
            out[k] -= s * drift[k];
        }
    }
}

/// One explicit Euler step of every agent from the same snapshot.
pub fn step(state: &SwarmState, dt: f64, cfg: &ControlConfig, kde: &StateDependentKde) -> Result<SwarmState, SwarmError> {
    step_with_estimator(state, dt, cfg, |i, s| kde.estimate(i, s))
}

/// [`step`] with a caller-supplied density estimate per agent.
pub fn step_with_estimator<F>(state: &SwarmState, dt: f64, cfg: &ControlConfig, estimator: F) -> Result<SwarmState, SwarmError>
where
    F: Fn(usize, &SwarmState) -> DensityEstimate + Sync,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SwarmError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let d = state.rank();
    let n = state.len();
    let grid = cfg.target.grid();
    let limit = 10.0 * grid.min_spacing();
    let s = cfg.sign.factor();

    let per_agent: Vec<([f64; MAX_RANK], [f64; MAX_RANK])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut u = [0.0; MAX_RANK];
            let estimate = estimator(i, state);
            control_into(state, i, cfg, &estimate, &mut u[..d]);
            let mut v = [0.0; MAX_RANK];
            consensus_drift_into(state, i, &mut v[..d]);
            for k in 0..d {
                v[k] = s * v[k] + u[k];
            }
            (v, u)
        })
        .collect();

    let mut positions = state.positions().to_vec();
    let mut velocities = vec![0.0; n * d];
    let mut controls = vec![0.0; n * d];
    for (i, (v, u)) in per_agent.iter().enumerate() {
        let displacement = dt * v[..d].iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(displacement <= limit) {
            return Err(SwarmError::UnstableStep {
                agent: i,
                displacement,
                limit,
            });
        }
        let p = &mut positions[i * d..(i + 1) * d];
        for k in 0..d {
            p[k] += dt * v[k];
        }
        grid.clamp_point(p);
        velocities[i * d..(i + 1) * d].copy_from_slice(&v[..d]);
        controls[i * d..(i + 1) * d].copy_from_slice(&u[..d]);
    }
    Ok(state.with_positions(positions, velocities, controls, state.time() + dt))
}
