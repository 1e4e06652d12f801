//! Discrete calculus on cell-centered grids.
//!
//! The gradient uses central differences with mirrored ghost cells (zero normal
//! derivative at the boundary faces). The divergence is defined as the exact
//! negative adjoint of the gradient, so `<grad f, v> = -<f, div v>` holds to
//! round-off for every pair `(f, v)`, and the Laplacian is their composition.

use super::GridSpec;

/// Writes `d f / d x_axis` into `out`.
pub fn gradient_axis(grid: &GridSpec, axis: usize, f: &[f64], out: &mut [f64]) {
    let n = grid.dims()[axis];
    let stride = grid.stride(axis);
    let inv = 0.5 / grid.spacing(axis);
    for (flat, slot) in out.iter_mut().enumerate() {
        let i = (flat / stride) % n;
        let plus = if i + 1 < n { f[flat + stride] } else { f[flat] };
        let minus = if i > 0 { f[flat - stride] } else { f[flat] };
        *slot = (plus - minus) * inv;
    }
}

/// Adds the `axis` contribution of the divergence of the component `v` to `out`.
pub fn divergence_axis_add(grid: &GridSpec, axis: usize, v: &[f64], out: &mut [f64]) {
    let n = grid.dims()[axis];
    let stride = grid.stride(axis);
    let inv = 0.5 / grid.spacing(axis);
    for (flat, slot) in out.iter_mut().enumerate() {
        let i = (flat / stride) % n;
        let mut acc = 0.0;
        if i + 1 < n {
            acc += v[flat + stride];
        }
        if i == 0 {
            acc += v[flat];
        }
        if i > 0 {
            acc -= v[flat - stride];
        }
        if i == n - 1 {
            acc -= v[flat];
        }
        *slot += acc * inv;
    }
}

/// Adds the `axis` contribution of the Laplacian of `f` to `out`, using `scratch`
/// (same length as `f`) for the intermediate derivative.
pub fn laplacian_axis_add(grid: &GridSpec, axis: usize, f: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    gradient_axis(grid, axis, f, scratch);
    divergence_axis_add(grid, axis, scratch, out);
}

/// Multilinear interpolation weights for `point`: the lower corner index per axis
/// and the fractional offset toward the upper neighbour. Points outside the box are
/// clamped to it; points in the half-cell boundary layer take the boundary value.
pub(crate) fn interpolation_stencil(grid: &GridSpec, point: &[f64]) -> ([usize; 3], [f64; 3]) {
    let mut lower = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for axis in 0..grid.rank() {
        let n = grid.dims()[axis];
        let x = point[axis].clamp(grid.origin()[axis], grid.upper(axis));
        let s = ((x - grid.origin()[axis]) / grid.spacing(axis) - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (s.floor() as usize).min(n - 2);
        lower[axis] = i0;
        frac[axis] = s - i0 as f64;
    }
    (lower, frac)
}

pub(crate) fn interpolate_slice(grid: &GridSpec, values: &[f64], point: &[f64]) -> f64 {
    let (lower, frac) = interpolation_stencil(grid, point);
    let rank = grid.rank();
    let mut acc = 0.0;
    for corner in 0..(1usize << rank) {
        let mut weight = 1.0;
        let mut flat = 0;
        for axis in 0..rank {
            let up = (corner >> axis) & 1;
            let i = lower[axis] + up;
            weight *= if up == 1 { frac[axis] } else { 1.0 - frac[axis] };
            flat = flat * grid.dims()[axis] + i;
        }
        if weight != 0.0 {
            acc += weight * values[flat];
        }
    }
    acc
}
