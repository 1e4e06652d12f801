//! Uniform-grid scalar and vector fields with discrete calculus, interpolation
//! and quadrature.

mod grid;
pub mod io;
pub mod ops;

use thiserror::Error;

pub use grid::{GridSpec, MAX_RANK};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has {got} values but the grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    /// Tabulates `f` at every cell center.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let rank = grid.rank();
        let values = (0..grid.len()).map(|i| f(&grid.center(i)[..rank])).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &ScalarField) -> Result<Self, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    /// Cell-volume weighted inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.grid.cell_volume()
    }

    /// Midpoint-rule integral over the box.
    pub fn quadrature(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn gradient(&self) -> VectorField {
        let components = (0..self.grid.rank())
            .map(|axis| {
                let mut out = vec![0.0; self.values.len()];
                ops::gradient_axis(&self.grid, axis, &self.values, &mut out);
                out
            })
            .collect();
        VectorField { grid: self.grid.clone(), components }
    }

    pub fn laplacian(&self) -> ScalarField {
        let mut out = vec![0.0; self.values.len()];
        let mut scratch = vec![0.0; self.values.len()];
        for axis in 0..self.grid.rank() {
            ops::laplacian_axis_add(&self.grid, axis, &self.values, &mut scratch, &mut out);
        }
        ScalarField { grid: self.grid.clone(), values: out }
    }

    /// Multilinear interpolation from the surrounding cell centers; queries
    /// outside the box are clamped onto it.
    pub fn interpolate(&self, point: &[f64]) -> f64 {
        ops::interpolate_slice(&self.grid, &self.values, point)
    }

    /// Value of the cell containing `point` (piecewise-constant lookup).
    pub fn cell_value(&self, point: &[f64]) -> f64 {
        self.values[self.grid.cell_of(point)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: GridSpec, components: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        if components.len() != grid.rank() {
            return Err(FieldError::InvalidGrid(format!(
                "expected {} components, got {}",
                grid.rank(),
                components.len()
            )));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(FieldError::LengthMismatch { expected: grid.len(), got: c.len() });
            }
        }
        Ok(Self { grid, components })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let components = vec![vec![0.0; grid.len()]; grid.rank()];
        Self { grid, components }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let rank = grid.rank();
        let mut components = vec![vec![0.0; grid.len()]; rank];
        for i in 0..grid.len() {
            let v = f(&grid.center(i)[..rank]);
            for (axis, c) in components.iter_mut().enumerate() {
                c[i] = v[axis];
            }
        }
        Self { grid, components }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    pub fn divergence(&self) -> ScalarField {
        let mut out = vec![0.0; self.grid.len()];
        for (axis, c) in self.components.iter().enumerate() {
            ops::divergence_axis_add(&self.grid, axis, c, &mut out);
        }
        ScalarField { grid: self.grid.clone(), values: out }
    }

    /// Cell-volume weighted inner product summed over components.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let s: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        s * self.grid.cell_volume()
    }

    /// Pointwise squared Euclidean norm.
    pub fn norm_squared(&self) -> ScalarField {
        let mut values = vec![0.0; self.grid.len()];
        for c in &self.components {
            for (v, x) in values.iter_mut().zip(c) {
                *v += x * x;
            }
        }
        ScalarField { grid: self.grid.clone(), values }
    }

    pub fn interpolate(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| ops::interpolate_slice(&self.grid, c, point))
            .collect()
    }

    /// Interpolates into a caller-provided buffer (length = rank).
    pub fn interpolate_into(&self, point: &[f64], out: &mut [f64]) {
        let (lower, frac) = ops::interpolation_stencil(&self.grid, point);
        let rank = self.grid.rank();
        out[..rank].iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << rank) {
            let mut weight = 1.0;
            let mut flat = 0;
            for axis in 0..rank {
                let up = (corner >> axis) & 1;
                weight *= if up == 1 { frac[axis] } else { 1.0 - frac[axis] };
                flat = flat * self.grid.dims()[axis] + lower[axis] + up;
            }
            if weight != 0.0 {
                for (axis, o) in out[..rank].iter_mut().enumerate() {
                    *o += weight * self.components[axis][flat];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_scalar(grid: &GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
        let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::new(grid.clone(), values).unwrap()
    }

    fn random_vector(grid: &GridSpec, rng: &mut ChaCha8Rng) -> VectorField {
        let comps = (0..grid.rank())
            .map(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        VectorField::new(grid.clone(), comps).unwrap()
    }

    fn interior(grid: &GridSpec, flat: usize, margin: usize) -> bool {
        let idx = grid.multi_index(flat);
        (0..grid.rank()).all(|a| idx[a] >= margin && idx[a] + margin < grid.dims()[a])
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = GridSpec::unit(2, 8).unwrap();
        let grad = ScalarField::constant(g, 3.5).gradient();
        for c in grad.components() {
            assert!(c.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradient_of_ramp_is_one_inside() {
        let g = GridSpec::unit(1, 16).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| x[0]);
        let grad = f.gradient();
        for i in 1..15 {
            assert!((grad.component(0)[i] - 1.0).abs() < 1e-12);
        }
    }

    // Measured on 32..256 grids: err/h^2 -> 41.34 = (2 pi)^3 / 6, the leading
    // truncation term of the central difference.
    const GRADIENT_ERROR_CONSTANT: f64 = 42.0;
    // Same measurement for the wide Laplacian stencil: 519.4 = (2 pi)^4 / 3.
    const LAPLACIAN_ERROR_CONSTANT: f64 = 520.0;

    #[test]
    fn gradient_sine_is_second_order() {
        let g = GridSpec::unit(2, 64).unwrap();
        let h = g.spacing(0);
        let f = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin());
        let grad = f.gradient();
        let mut max_err: f64 = 0.0;
        for i in 0..g.len() {
            if interior(&g, i, 1) {
                let x = g.center(i)[0];
                max_err = max_err.max((grad.component(0)[i] - 2.0 * PI * (2.0 * PI * x).cos()).abs());
            }
        }
        assert!(max_err <= GRADIENT_ERROR_CONSTANT * h * h, "err {max_err}");
    }

    #[test]
    fn gradient_and_laplacian_converge_at_second_order() {
        let err = |n: usize| {
            let g = GridSpec::unit(1, n).unwrap();
            let f = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).cos());
            let lap = f.laplacian();
            let grad = f.gradient();
            let mut e_lap: f64 = 0.0;
            let mut e_grad: f64 = 0.0;
            // Stay a fixed physical distance away from the boundary.
            for i in n / 8..n - n / 8 {
                let x = g.center_coord(0, i);
                e_lap = e_lap.max((lap.values()[i] + 4.0 * PI * PI * (2.0 * PI * x).cos()).abs());
                e_grad = e_grad.max((grad.component(0)[i] + 2.0 * PI * (2.0 * PI * x).sin()).abs());
            }
            (e_grad, e_lap)
        };
        let (g1, l1) = err(64);
        let (g2, l2) = err(128);
        assert!((g1 / g2 - 4.0).abs() <= 0.8, "gradient ratio {}", g1 / g2);
        assert!((l1 / l2 - 4.0).abs() <= 0.8, "laplacian ratio {}", l1 / l2);
    }

    #[test]
    fn laplacian_cosine_matches_analytic() {
        let g = GridSpec::unit(1, 512).unwrap();
        let h = g.spacing(0);
        let f = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).cos());
        let lap = f.laplacian();
        for i in 2..510 {
            let x = g.center_coord(0, i);
            let exact = -4.0 * PI * PI * (2.0 * PI * x).cos();
            assert!((lap.values()[i] - exact).abs() <= LAPLACIAN_ERROR_CONSTANT * h * h, "cell {i}");
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        let g = GridSpec::unit(2, 16).unwrap();
        let v = VectorField::from_fn(g.clone(), |x| vec![x[0], x[1]]);
        let div = v.divergence();
        for i in 0..g.len() {
            if interior(&g, i, 1) {
                assert!((div.values()[i] - 2.0).abs() < 1e-12);
            }
        }
        assert!(VectorField::zeros(g).divergence().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn summation_by_parts_holds_for_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dims in [vec![9], vec![7, 5], vec![4, 6, 3]] {
            let rank = dims.len();
            let g = GridSpec::new(dims, vec![0.0; rank], vec![1.3; rank]).unwrap();
            for _ in 0..20 {
                let f = random_scalar(&g, &mut rng);
                let v = random_vector(&g, &mut rng);
                let lhs = f.gradient().dot(&v);
                let rhs = f.dot(&v.divergence());
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!((lhs + rhs).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn laplacian_is_divergence_of_gradient_and_negative_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GridSpec::new(vec![10, 7], vec![0.0, 0.0], vec![1.0, 0.6]).unwrap();
        for _ in 0..100 {
            let f = random_scalar(&g, &mut rng);
            let lap = f.laplacian();
            let composed = f.gradient().divergence();
            for (a, b) in lap.values().iter().zip(composed.values()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(f.dot(&lap) <= 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let g = GridSpec::unit(1, 10).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = rng.gen_range(0.05..0.95);
            assert!((f.interpolate(&[x]) - (2.0 * x + 1.0)).abs() < 1e-12);
        }
        for i in 0..10 {
            assert!((f.interpolate(&[g.center_coord(0, i)]) - f.values()[i]).abs() < 1e-14);
        }

        let g2 = GridSpec::new(vec![6, 9], vec![-1.0, 0.5], vec![2.0, 3.0]).unwrap();
        let bilinear = |x: &[f64]| 1.0 + 0.3 * x[0] - 2.0 * x[1] + 0.7 * x[0] * x[1];
        let f2 = ScalarField::from_fn(g2.clone(), bilinear);
        for _ in 0..200 {
            let p = [rng.gen_range(-0.8..0.8), rng.gen_range(0.7..3.3)];
            assert!((f2.interpolate(&p) - bilinear(&p)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_clamps_outside_queries() {
        let g = GridSpec::unit(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_scalar(&g, &mut rng);
        for _ in 0..100 {
            let p: [f64; 2] = [rng.gen_range(-2.0..3.0), rng.gen_range(-2.0..3.0)];
            let clamped = [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
            assert_eq!(f.interpolate(&p), f.interpolate(&clamped));
        }
    }

    #[test]
    fn interpolation_is_continuous_across_cells() {
        let g = GridSpec::unit(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_scalar(&g, &mut rng);
        let eps = 1e-9;
        for i in 1..8 {
            let face = i as f64 / 8.0 + 1.0 / 16.0;
            let y = rng.gen_range(0.0..1.0);
            let a = f.interpolate(&[face - eps, y]);
            let b = f.interpolate(&[face + eps, y]);
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn quadrature_examples() {
        let g = GridSpec::unit(2, 64).unwrap();
        assert!((ScalarField::constant(g.clone(), 1.0).quadrature() - 1.0).abs() < 1e-12);
        assert_eq!(ScalarField::zeros(g.clone()).quadrature(), 0.0);
        let s = 0.08;
        let gauss = ScalarField::from_fn(g, |x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            (-r2 / (2.0 * s * s)).exp() / (2.0 * PI * s * s)
        });
        assert!((gauss.quadrature() - 1.0).abs() < 1e-3);
    }
}
