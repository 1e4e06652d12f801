use rayon::prelude::*;

use crate::field::{GridSpec, ScalarField};

use super::poisson::SpaceTimePoisson;
use super::spacetime::axis_split;
use super::{OmtError, SpaceTimeField};

/// Euclidean projection onto the affine set of space-time fields that satisfy
/// the discrete continuity equation with prescribed end densities.
///
/// The free variables are the interior density levels `1..T-1` and the
/// interior face fluxes; the end levels are overwritten with the boundary data
/// and the boundary faces with zero flux.
pub struct ContinuityProjector {
    grid: GridSpec,
    time_steps: usize,
    poisson: SpaceTimePoisson,
}

impl ContinuityProjector {
    pub fn new(grid: &GridSpec, time_steps: usize) -> Self {
        Self {
            grid: grid.clone(),
            time_steps,
            poisson: SpaceTimePoisson::new(grid, time_steps),
        }
    }

    pub fn project(&self, field: &mut SpaceTimeField, rho0: &[f64], rho1: &[f64]) -> Result<(), OmtError> {
        if field.grid() != &self.grid || field.time_steps() != self.time_steps {
            return Err(OmtError::GridMismatch);
        }
        let n = self.grid.len();
        let t = self.time_steps;
        if rho0.len() != n || rho1.len() != n {
            return Err(OmtError::GridMismatch);
        }
        field.rho_level_mut(0).copy_from_slice(rho0);
        field.rho_level_mut(t).copy_from_slice(rho1);
        zero_boundary_faces(field);
        let defect = field.continuity_defect();
        let mut q = vec![0.0; defect.len()];
        self.poisson.solve(&defect, &mut q)?;

        // rho_j -= (q_{j-1} - q_j) / dt for the interior levels
        let inv_dt = 1.0 / field.dt();
        for j in 1..t {
            let (qa, qb) = (&q[(j - 1) * n..j * n], &q[j * n..(j + 1) * n]);
            for ((r, a), b) in field.rho_level_mut(j).iter_mut().zip(qa).zip(qb) {
                *r -= (a - b) * inv_dt;
            }
        }
        // interior faces: m += (q_upper - q_lower) / h
        let rank = self.grid.rank();
        let grid = &self.grid;
        let block = field.momentum_block();
        let offsets = field.offsets().to_vec();
        field
            .momentum_mut()
            .par_chunks_mut(block)
            .enumerate()
            .for_each(|(k, level)| {
                let qk = &q[k * n..(k + 1) * n];
                for axis in 0..rank {
                    let (outer, len, inner) = axis_split(grid, axis);
                    let inv_h = 1.0 / grid.spacing(axis);
                    let faces = &mut level[offsets[axis]..offsets[axis + 1]];
                    for o in 0..outer {
                        for i in 1..len {
                            let f0 = (o * (len + 1) + i) * inner;
                            let c0 = (o * len + i) * inner;
                            for j in 0..inner {
                                faces[f0 + j] += (qk[c0 + j] - qk[c0 - inner + j]) * inv_h;
                            }
                        }
                    }
                }
            });
        Ok(())
    }
}

pub(crate) fn zero_boundary_faces(field: &mut SpaceTimeField) {
    let grid = field.grid().clone();
    for k in 0..field.time_steps() {
        for axis in 0..grid.rank() {
            let (outer, len, inner) = axis_split(&grid, axis);
            let faces = field.momentum_component_mut(k, axis);
            for o in 0..outer {
                for j in 0..inner {
                    faces[o * (len + 1) * inner + j] = 0.0;
                    faces[(o * (len + 1) + len) * inner + j] = 0.0;
                }
            }
        }
    }
}

/// Nearest field (in the Euclidean sense) satisfying discrete continuity with
/// end densities `rho0` and `rho1`.
pub fn project_continuity(
    field: &SpaceTimeField,
    rho0: &ScalarField,
    rho1: &ScalarField,
) -> Result<SpaceTimeField, OmtError> {
    if rho0.grid() != field.grid() || rho1.grid() != field.grid() {
        return Err(OmtError::GridMismatch);
    }
    let projector = ContinuityProjector::new(field.grid(), field.time_steps());
    let mut out = field.clone();
    projector.project(&mut out, rho0.values(), rho1.values())?;
    Ok(out)
}
