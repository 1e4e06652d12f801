//! Agent dynamics with proximity consensus and the two-phase control law.

mod control;
mod run;
mod weight;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{GridSpec, ScalarField, MAX_RANK};

pub use control::{control, control_with_estimate, step, step_with_estimator, ConsensusSign, ControlConfig};
pub use run::{run, run_from, DiagnosticsView, SimulationOutput, SimulationParams, Snapshot};
pub use weight::{InteractionWeight, WeightKind};

#[derive(Debug, Error)]
pub enum SwarmError {
    #[error("rejection sampling acceptance rate {0:e} is below 1e-6")]
    RejectionStall(f64),
    #[error("agent {agent} moved {displacement} in one step (limit {limit}); reduce dt")]
    UnstableStep { agent: usize, displacement: f64, limit: f64 },
    #[error("invalid swarm parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Kde(#[from] crate::kde::KdeError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
}

/// Agent positions and last applied velocities (row-major, `N x d`), the
/// simulation clock and the proximity graph of the current positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    rank: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    controls: Vec<f64>,
    time: f64,
    adjacency: Vec<Vec<usize>>,
    weight: InteractionWeight,
    rng_seed: u64,
}

impl SwarmState {
    pub fn from_positions(
        rank: usize,
        positions: Vec<f64>,
        weight: &InteractionWeight,
        rng_seed: u64,
    ) -> Result<Self, SwarmError> {
        if rank == 0 || rank > MAX_RANK || positions.len() % rank != 0 {
            return Err(SwarmError::InvalidParams(format!(
                "{} coordinates do not form rank-{rank} positions",
                positions.len()
            )));
        }
        if !(weight.radius >= 0.0 && weight.radius.is_finite()) {
            return Err(SwarmError::InvalidParams(format!("interaction radius must be >= 0, got {}", weight.radius)));
        }
        let n = positions.len() / rank;
        let mut state = Self {
            rank,
            velocities: vec![0.0; positions.len()],
            controls: vec![0.0; positions.len()],
            positions,
            time: 0.0,
            adjacency: vec![Vec::new(); n],
            weight: *weight,
            rng_seed,
        };
        state.refresh_adjacency();
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn weight(&self) -> &InteractionWeight {
        &self.weight
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.rank..(i + 1) * self.rank]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.rank..(i + 1) * self.rank]
    }

    /// Control applied in the last step.
    pub fn applied_control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.rank..(i + 1) * self.rank]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Raw position access; the adjacency is not refreshed.
    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn velocities_mut(&mut self) -> &mut [f64] {
        &mut self.velocities
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Recomputes the proximity graph for the current positions.
    pub fn refresh_adjacency(&mut self) {
        self.adjacency = hashed_adjacency(&self.positions, self.rank, self.weight.radius);
    }

    fn with_positions(&self, positions: Vec<f64>, velocities: Vec<f64>, controls: Vec<f64>, time: f64) -> Self {
        let mut next = Self {
            rank: self.rank,
            positions,
            velocities,
            controls,
            time,
            adjacency: Vec::new(),
            weight: self.weight,
            rng_seed: self.rng_seed,
        };
        next.refresh_adjacency();
        next
    }
}

fn within(a: &[f64], b: &[f64], r2: f64) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() <= r2
}

/// Uniform hash with bucket size `r`; each agent checks the `3^d`
/// surrounding buckets. Neighbour lists are sorted and exclude the agent.
fn hashed_adjacency(positions: &[f64], rank: usize, radius: f64) -> Vec<Vec<usize>> {
    let n = positions.len() / rank;
    if radius <= 0.0 {
        return vec![Vec::new(); n];
    }
    let r2 = radius * radius;
    let key = |p: &[f64]| {
        let mut k = [0i64; MAX_RANK];
        for (a, &x) in p.iter().enumerate() {
            k[a] = (x / radius).floor() as i64;
        }
        k
    };
    let mut buckets: HashMap<[i64; MAX_RANK], Vec<usize>> = HashMap::new();
    for i in 0..n {
        buckets.entry(key(&positions[i * rank..(i + 1) * rank])).or_default().push(i);
    }
    let offsets: Vec<[i64; MAX_RANK]> = (0..3usize.pow(rank as u32))
        .map(|mut c| {
            let mut o = [0i64; MAX_RANK];
            for slot in o.iter_mut().take(rank) {
                *slot = (c % 3) as i64 - 1;
                c /= 3;
            }
            o
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = &positions[i * rank..(i + 1) * rank];
            let k = key(p);
            let mut out = Vec::new();
            for o in &offsets {
                let mut kk = k;
                for a in 0..rank {
                    kk[a] += o[a];
                }
                if let Some(list) = buckets.get(&kk) {
                    out.extend(
                        list.iter()
                            .copied()
                            .filter(|&j| j != i && within(p, &positions[j * rank..(j + 1) * rank], r2)),
                    );
                }
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// O(N^2) reference for the proximity graph.
pub fn brute_force_adjacency(state: &SwarmState, weight: &InteractionWeight) -> Vec<Vec<usize>> {
    let n = state.len();
    let r2 = weight.radius * weight.radius;
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && weight.radius > 0.0 && within(state.position(i), state.position(j), r2))
                .collect()
        })
        .collect()
}

/// The state with its graph rebuilt for `weight`.
pub fn rebuild_adjacency(state: &SwarmState, weight: &InteractionWeight) -> SwarmState {
    let mut next = state.clone();
    next.weight = *weight;
    next.refresh_adjacency();
    next
}

/// `n` i.i.d. positions from the piecewise-constant density `rho0` by
/// rejection against its maximum.
pub fn sample_initial(
    rho0: &ScalarField,
    n: usize,
    seed: u64,
    weight: &InteractionWeight,
) -> Result<SwarmState, SwarmError> {
    let grid: &GridSpec = rho0.grid();
    let rank = grid.rank();
    let max = rho0.max();
    if rho0.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !(max > 0.0) {
        return Err(SwarmError::InvalidParams("initial density must be nonnegative with positive mass".into()));
    }
    let volume: f64 = grid.extent().iter().product();
    let acceptance = rho0.quadrature() / (max * volume);
    if acceptance < 1e-6 {
        return Err(SwarmError::RejectionStall(acceptance));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n * rank);
    let mut p = [0.0; MAX_RANK];
    while positions.len() < n * rank {
        for a in 0..rank {
            p[a] = grid.origin()[a] + rng.gen::<f64>() * grid.extent()[a];
        }
        if rng.gen::<f64>() * max < rho0.cell_value(&p[..rank]) {
            positions.extend_from_slice(&p[..rank]);
        }
    }
    SwarmState::from_positions(rank, positions, weight, seed)
}

/// `(1/N) sum_{j in N_i} (x_j - x_i)`: attraction toward the neighbours.
pub fn consensus_drift(state: &SwarmState, i: usize) -> Vec<f64> {
    let mut out = vec![0.0; state.rank()];
    consensus_drift_into(state, i, &mut out);
    out
}

pub(crate) fn consensus_drift_into(state: &SwarmState, i: usize, out: &mut [f64]) {
    let xi = state.position(i);
    out.iter_mut().for_each(|v| *v = 0.0);
    for &j in state.neighbors(i) {
        for (o, (a, b)) in out.iter_mut().zip(state.position(j).iter().zip(xi)) {
            *o += a - b;
        }
    }
    let inv_n = 1.0 / state.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv_n);
}
