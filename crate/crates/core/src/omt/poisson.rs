//! Space-time Poisson solve behind the continuity projection.
//!
//! The unknown `q` lives on the half time levels `0..T` times the spatial
//! cells. The operator is `A A^T` where `A` maps (interior densities,
//! face momentum) to the continuity defect: a Neumann second difference in
//! time plus the compact Neumann Laplacian (negated) in space. Both are
//! diagonalized by DCT-II along every axis, which gives an exact
//! preconditioner for conjugate gradients.

use std::sync::Arc;

use rayon::prelude::*;
use rustdct::{DctPlanner, TransformType2And3};

use crate::field::GridSpec;

use super::spacetime::axis_split;
use super::OmtError;

const CG_TOLERANCE: f64 = 1e-10;
const CG_MAX_ITERATIONS: usize = 200;

pub struct SpaceTimePoisson {
    grid: GridSpec,
    time_steps: usize,
    dt: f64,
    /// `[T, n_0, .., n_{d-1}]`
    shape: Vec<usize>,
    plans: Vec<Arc<dyn TransformType2And3<f64>>>,
    /// Inverse eigenvalue per DCT mode (zero for the constant mode), with the
    /// DCT-III normalization folded in.
    inverse: Vec<f64>,
}

impl SpaceTimePoisson {
    pub fn new(grid: &GridSpec, time_steps: usize) -> Self {
        let dt = 1.0 / time_steps as f64;
        let mut shape = vec![time_steps];
        shape.extend_from_slice(grid.dims());
        let mut planner = DctPlanner::new();
        let plans: Vec<_> = shape.iter().map(|&n| planner.plan_dct2(n)).collect();

        let mut eigenvalues: Vec<Vec<f64>> = Vec::with_capacity(shape.len());
        eigenvalues.push(
            (0..time_steps)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * time_steps as f64)).sin();
                    4.0 * s * s / (dt * dt)
                })
                .collect(),
        );
        for axis in 0..grid.rank() {
            let n = grid.dims()[axis];
            let h = grid.spacing(axis);
            eigenvalues.push(
                (0..n)
                    .map(|k| {
                        let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                        4.0 * s * s / (h * h)
                    })
                    .collect(),
            );
        }
        let len: usize = shape.iter().product();
        let norm: f64 = shape.iter().map(|&n| 2.0 / n as f64).product();
        let strides: Vec<usize> = (0..shape.len()).map(|a| shape[a + 1..].iter().product()).collect();
        let inverse = (0..len)
            .map(|flat| {
                if flat == 0 {
                    return 0.0;
                }
                let lambda: f64 = eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(axis, eig)| eig[(flat / strides[axis]) % shape[axis]])
                    .sum();
                norm / lambda
            })
            .collect();
        Self {
            grid: grid.clone(),
            time_steps,
            dt,
            shape,
            plans,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// `out = A A^T q`, matrix-free.
    pub fn apply(&self, q: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        let t = self.time_steps;
        let inv_dt2 = 1.0 / (self.dt * self.dt);
        out.par_chunks_mut(n).enumerate().for_each(|(k, chunk)| {
            let here = &q[k * n..(k + 1) * n];
            for (i, slot) in chunk.iter_mut().enumerate() {
                let mut acc = 0.0;
                if k > 0 {
                    acc += here[i] - q[(k - 1) * n + i];
                }
                if k + 1 < t {
                    acc += here[i] - q[(k + 1) * n + i];
                }
                *slot = acc * inv_dt2;
            }
            for axis in 0..self.grid.rank() {
                let (_, len, inner) = axis_split(&self.grid, axis);
                let inv_h2 = 1.0 / self.grid.spacing(axis).powi(2);
                for (c, slot) in chunk.iter_mut().enumerate() {
                    let i = (c / inner) % len;
                    let mut acc = 0.0;
                    if i > 0 {
                        acc += here[c] - here[c - inner];
                    }
                    if i + 1 < len {
                        acc += here[c] - here[c + inner];
                    }
                    *slot += acc * inv_h2;
                }
            }
        });
    }

    /// Exact pseudo-inverse on the mean-free subspace via separable DCTs.
    pub fn spectral_solve(&self, rhs: &[f64], out: &mut [f64]) {
        out.copy_from_slice(rhs);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        for axis in 0..self.shape.len() {
            self.transform_axis(out, axis, true);
        }
        out.par_iter_mut().zip(&self.inverse).for_each(|(v, inv)| *v *= inv);
        for axis in 0..self.shape.len() {
            self.transform_axis(out, axis, false);
        }
    }

    fn transform_axis(&self, data: &mut [f64], axis: usize, forward: bool) {
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let plan = &self.plans[axis];
        let run = |line: &mut [f64], scratch: &mut [f64]| {
            if forward {
                plan.process_dct2_with_scratch(line, scratch);
            } else {
                plan.process_dct3_with_scratch(line, scratch);
            }
        };
        let scratch_len = plan.get_scratch_len();
        if inner == 1 {
            data.par_chunks_mut(n).for_each_init(
                || vec![0.0; scratch_len],
                |scratch, line| run(line, scratch),
            );
            return;
        }
        // Gather strided lines into contiguous rows, transform, scatter back.
        let mut lines = vec![0.0; outer * inner * n];
        lines.par_chunks_mut(n).enumerate().for_each(|(l, line)| {
            let (o, i) = (l / inner, l % inner);
            let base = o * n * inner + i;
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = data[base + j * inner];
            }
        });
        lines.par_chunks_mut(n).for_each_init(
            || vec![0.0; scratch_len],
            |scratch, line| run(line, scratch),
        );
        data.par_chunks_mut(n * inner).enumerate().for_each(|(o, block)| {
            for i in 0..inner {
                let line = &lines[(o * inner + i) * n..(o * inner + i + 1) * n];
                for (j, v) in line.iter().enumerate() {
                    block[j * inner + i] = *v;
                }
            }
        });
    }

    /// Preconditioned CG for `A A^T q = rhs` (rhs made mean-free first).
    /// Returns the iteration count.
    pub fn solve(&self, rhs: &[f64], q: &mut [f64]) -> Result<usize, OmtError> {
        let len = self.len();
        let mean = rhs.iter().sum::<f64>() / len as f64;
        let b: Vec<f64> = rhs.iter().map(|v| v - mean).collect();
        let b_norm = norm(&b);
        q.iter_mut().for_each(|v| *v = 0.0);
        if b_norm == 0.0 {
            return Ok(0);
        }
        let mut r = b;
        let mut z = vec![0.0; len];
        let mut ap = vec![0.0; len];
        self.spectral_solve(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for iter in 1..=CG_MAX_ITERATIONS {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(OmtError::PoissonNonConvergence { iterations: iter, residual: norm(&r) / b_norm });
            }
            let alpha = rz / pap;
            q.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
            if norm(&r) <= CG_TOLERANCE * b_norm {
                return Ok(iter);
            }
            self.spectral_solve(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        Err(OmtError::PoissonNonConvergence {
            iterations: CG_MAX_ITERATIONS,
            residual: norm(&r) / b_norm,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_chunks(4096)
        .zip(b.par_chunks(4096))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mean_free(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = v.iter().sum::<f64>() / len as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        v
    }

    #[test]
    fn spectral_solve_inverts_operator() {
        for (dims, extent, t) in [
            (vec![7], vec![1.0], 5),
            (vec![6, 5], vec![1.0, 2.0], 4),
            (vec![4, 3, 5], vec![1.0, 0.5, 1.5], 3),
        ] {
            let rank = dims.len();
            let grid = GridSpec::new(dims, vec![0.0; rank], extent).unwrap();
            let p = SpaceTimePoisson::new(&grid, t);
            let b = random_mean_free(p.len(), 3);
            let mut q = vec![0.0; p.len()];
            p.spectral_solve(&b, &mut q);
            let mut back = vec![0.0; p.len()];
            p.apply(&q, &mut back);
            let err = back.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "rank {rank}: {err}");
        }
    }

    #[test]
    fn cg_reaches_tolerance() {
        let grid = GridSpec::unit(2, 8).unwrap();
        let p = SpaceTimePoisson::new(&grid, 6);
        let b = random_mean_free(p.len(), 11);
        let mut q = vec![0.0; p.len()];
        let iters = p.solve(&b, &mut q).unwrap();
        assert!(iters <= 3);
        let mut back = vec![0.0; p.len()];
        p.apply(&q, &mut back);
        let res = norm(&back.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(res <= 1e-10 * norm(&b));
    }

    #[test]
    fn operator_is_symmetric() {
        let grid = GridSpec::new(vec![5, 4], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let p = SpaceTimePoisson::new(&grid, 3);
        let a = random_mean_free(p.len(), 1);
        let b = random_mean_free(p.len(), 2);
        let mut aa = vec![0.0; p.len()];
        let mut ab = vec![0.0; p.len()];
        p.apply(&a, &mut aa);
        p.apply(&b, &mut ab);
        assert!((dot(&aa, &b) - dot(&a, &ab)).abs() < 1e-9 * dot(&aa, &aa).sqrt());
    }
}
