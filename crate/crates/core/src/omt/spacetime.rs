use crate::field::{GridSpec, ScalarField, VectorField};

use super::OmtError;

/// `(outer, n, inner)` split of the cell array around `axis`: cell `(o, i, j)`
/// has flat index `(o * n + i) * inner + j`, and along the same axis the face
/// array (with `n + 1` entries) has flat index `(o * (n + 1) + i) * inner + j`
/// for the lower face of that cell.
pub(crate) fn axis_split(grid: &GridSpec, axis: usize) -> (usize, usize, usize) {
    let dims = grid.dims();
    (dims[..axis].iter().product(), dims[axis], dims[axis + 1..].iter().product())
}

/// Flat index of the lower face (along `axis`) of cell `cell`.
#[inline]
pub(crate) fn lower_face(cell: usize, n: usize, inner: usize) -> usize {
    let o = cell / (n * inner);
    let rest = cell % (n * inner);
    o * (n + 1) * inner + rest
}

/// Density and momentum on a staggered space-time grid over the unit horizon.
///
/// Density lives at cell centers on the `T + 1` integer time levels
/// `t_k = k / T`. Momentum lives on the `T` half levels; component `a` sits on
/// the cell faces normal to axis `a` (`dims[a] + 1` faces along that axis,
/// the two outermost being the boundary). The discrete continuity equation at
/// half level `k` is `(rho_{k+1} - rho_k) / dt + div m_k = 0` with the compact
/// face-difference divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: GridSpec,
    time_steps: usize,
    rho: Vec<f64>,
    momentum: Vec<f64>,
    /// Start of each component inside one half-level block, plus the block size.
    offsets: Vec<usize>,
}

impl SpaceTimeField {
    pub fn zeros(grid: GridSpec, time_steps: usize) -> Result<Self, OmtError> {
        if time_steps < 2 {
            return Err(OmtError::InvalidParams(format!("need at least 2 time steps, got {time_steps}")));
        }
        let n = grid.len();
        let mut offsets = vec![0];
        for axis in 0..grid.rank() {
            let faces = n / grid.dims()[axis] * (grid.dims()[axis] + 1);
            offsets.push(offsets[axis] + faces);
        }
        Ok(Self {
            rho: vec![0.0; (time_steps + 1) * n],
            momentum: vec![0.0; time_steps * offsets[grid.rank()]],
            grid,
            time_steps,
            offsets,
        })
    }

    /// Straight-line interpolation `(1 - t) rho0 + t rho1` with zero momentum.
    pub fn linear_interpolation(rho0: &ScalarField, rho1: &ScalarField, time_steps: usize) -> Result<Self, OmtError> {
        if rho0.grid() != rho1.grid() {
            return Err(OmtError::GridMismatch);
        }
        let mut out = Self::zeros(rho0.grid().clone(), time_steps)?;
        for k in 0..=time_steps {
            let t = k as f64 / time_steps as f64;
            for ((r, a), b) in out.rho_level_mut(k).iter_mut().zip(rho0.values()).zip(rho1.values()) {
                *r = (1.0 - t) * a + t * b;
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.time_steps as f64
    }

    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub fn momentum(&self) -> &[f64] {
        &self.momentum
    }

    pub fn momentum_mut(&mut self) -> &mut [f64] {
        &mut self.momentum
    }

    /// Number of momentum values per half level.
    pub fn momentum_block(&self) -> usize {
        self.offsets[self.grid.rank()]
    }

    pub(crate) fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn rho_level(&self, k: usize) -> &[f64] {
        let n = self.cells();
        &self.rho[k * n..(k + 1) * n]
    }

    pub fn rho_level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.cells();
        &mut self.rho[k * n..(k + 1) * n]
    }

    /// Face fluxes of component `axis` at half level `k`.
    pub fn momentum_component(&self, k: usize, axis: usize) -> &[f64] {
        let base = k * self.momentum_block();
        &self.momentum[base + self.offsets[axis]..base + self.offsets[axis + 1]]
    }

    pub fn momentum_component_mut(&mut self, k: usize, axis: usize) -> &mut [f64] {
        let base = k * self.momentum_block();
        let (a, b) = (self.offsets[axis], self.offsets[axis + 1]);
        &mut self.momentum[base + a..base + b]
    }

    pub fn density(&self, k: usize) -> ScalarField {
        ScalarField::new(self.grid.clone(), self.rho_level(k).to_vec()).expect("level length matches grid")
    }

    /// Momentum at half level `k`, averaged from the faces onto cell centers.
    pub fn momentum_field(&self, k: usize) -> VectorField {
        let comps = (0..self.grid.rank())
            .map(|a| {
                let (_, n, inner) = axis_split(&self.grid, a);
                let faces = self.momentum_component(k, a);
                (0..self.cells())
                    .map(|c| {
                        let lo = lower_face(c, n, inner);
                        0.5 * (faces[lo] + faces[lo + inner])
                    })
                    .collect()
            })
            .collect();
        VectorField::new(self.grid.clone(), comps).expect("component lengths match grid")
    }

    /// Density averaged onto half level `k`.
    pub fn half_level_density(&self, k: usize) -> Vec<f64> {
        self.rho_level(k)
            .iter()
            .zip(self.rho_level(k + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Total mass of every integer time level.
    pub fn level_masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        (0..=self.time_steps)
            .map(|k| self.rho_level(k).iter().sum::<f64>() * vol)
            .collect()
    }

    /// Adds `div m_k` (compact face differences) to `out`.
    pub(crate) fn divergence_add(&self, k: usize, out: &mut [f64]) {
        for axis in 0..self.grid.rank() {
            let (_, n, inner) = axis_split(&self.grid, axis);
            let inv_h = 1.0 / self.grid.spacing(axis);
            let faces = self.momentum_component(k, axis);
            for (c, slot) in out.iter_mut().enumerate() {
                let lo = lower_face(c, n, inner);
                *slot += (faces[lo + inner] - faces[lo]) * inv_h;
            }
        }
    }

    /// Pointwise `d rho / dt + div m` at every half level, flattened `[k][cell]`.
    pub fn continuity_defect(&self) -> Vec<f64> {
        let n = self.cells();
        let inv_dt = 1.0 / self.dt();
        let mut out = vec![0.0; self.time_steps * n];
        for (k, chunk) in out.chunks_mut(n).enumerate() {
            for ((c, a), b) in chunk.iter_mut().zip(self.rho_level(k)).zip(self.rho_level(k + 1)) {
                *c = (b - a) * inv_dt;
            }
            self.divergence_add(k, chunk);
        }
        out
    }

    /// `||d rho / dt + div m||_2 / (||rho||_2 / horizon)` with a unit horizon.
    pub fn continuity_residual(&self) -> f64 {
        let defect: f64 = self.continuity_defect().iter().map(|c| c * c).sum::<f64>().sqrt();
        let scale: f64 = self.rho.iter().map(|r| r * r).sum::<f64>().sqrt();
        if scale == 0.0 {
            return defect;
        }
        defect / scale
    }

    /// `|m|^2` per cell at half level `k`, with each component averaged from
    /// the two faces of the cell.
    pub(crate) fn cell_momentum_sq(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cells()];
        for axis in 0..self.grid.rank() {
            let (_, n, inner) = axis_split(&self.grid, axis);
            let faces = self.momentum_component(k, axis);
            for (c, slot) in out.iter_mut().enumerate() {
                let lo = lower_face(c, n, inner);
                *slot += (0.5 * (faces[lo] + faces[lo + inner])).powi(2);
            }
        }
        out
    }

    /// Discrete kinetic energy `sum |m|^2 / (2 max(rho_half, floor)) * dV * dt`
    /// with face fluxes averaged onto cell centers.
    pub fn bb_energy(&self, rho_floor: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.time_steps {
            let m2 = self.cell_momentum_sq(k);
            for (i, m2) in m2.iter().enumerate() {
                let rho = (0.5 * (self.rho_level(k)[i] + self.rho_level(k + 1)[i])).max(rho_floor);
                total += m2 / (2.0 * rho);
            }
        }
        total * self.grid.cell_volume() * self.dt()
    }

    /// Velocity `m / max(rho_half, floor)` at cell centers for every half level.
    pub fn velocities(&self, rho_floor: f64) -> Vec<VectorField> {
        (0..self.time_steps)
            .map(|k| {
                let rho = self.half_level_density(k);
                let mut m = self.momentum_field(k);
                for comp in m.components_mut() {
                    comp.iter_mut().zip(&rho).for_each(|(v, r)| *v /= r.max(rho_floor));
                }
                m
            })
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.rho.iter_mut().for_each(|r| *r *= s);
        self.momentum.iter_mut().for_each(|m| *m *= s);
    }
}
