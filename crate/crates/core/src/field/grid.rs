use serde::{Deserialize, Serialize};

use super::FieldError;

/// Maximum number of spatial axes supported by the grid substrate.
pub const MAX_RANK: usize = 3;

/// Uniform, cell-centered rectangular grid.
///
/// Cell `i` along axis `a` has its center at `origin[a] + (i + 0.5) * spacing[a]`,
/// with `spacing[a] = extent[a] / dims[a]`. Values are stored row-major with the
/// last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: Vec<usize>,
    origin: Vec<f64>,
    extent: Vec<f64>,
}

impl GridSpec {
    pub fn new(dims: Vec<usize>, origin: Vec<f64>, extent: Vec<f64>) -> Result<Self, FieldError> {
        let rank = dims.len();
        if rank == 0 || rank > MAX_RANK {
            return Err(FieldError::InvalidGrid(format!(
                "rank must be between 1 and {MAX_RANK}, got {rank}"
            )));
        }
        if origin.len() != rank || extent.len() != rank {
            return Err(FieldError::InvalidGrid(format!(
                "origin/extent lengths ({}, {}) do not match rank {rank}",
                origin.len(),
                extent.len()
            )));
        }
        for axis in 0..rank {
            if dims[axis] < 2 {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {axis} needs at least 2 cells, got {}",
                    dims[axis]
                )));
            }
            if !(extent[axis] > 0.0) || !extent[axis].is_finite() {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {axis} extent must be positive and finite, got {}",
                    extent[axis]
                )));
            }
            if !origin[axis].is_finite() {
                return Err(FieldError::InvalidGrid(format!("axis {axis} origin is not finite")));
            }
        }
        Ok(Self { dims, origin, extent })
    }

    /// The unit box `[0, 1]^d` with `n` cells per axis.
    pub fn unit(rank: usize, n: usize) -> Result<Self, FieldError> {
        Self::new(vec![n; rank], vec![0.0; rank], vec![1.0; rank])
    }

    /// 1D grid whose cell centers are exactly `nodes` equispaced points on
    /// `[-half_width, half_width]` (endpoints included).
    pub fn symmetric_nodes(half_width: f64, nodes: usize) -> Result<Self, FieldError> {
        if nodes < 2 || !(half_width > 0.0) {
            return Err(FieldError::InvalidGrid(format!(
                "symmetric node grid needs >= 2 nodes and positive half-width (got {nodes}, {half_width})"
            )));
        }
        let dx = 2.0 * half_width / (nodes - 1) as f64;
        Self::new(vec![nodes], vec![-half_width - 0.5 * dx], vec![2.0 * half_width + dx])
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.dims[axis] as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.rank()).map(|a| self.spacing(a)).collect()
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.rank()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.rank()).map(|a| self.spacing(a)).product()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance in the flat array between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_RANK] {
        let mut out = [0; MAX_RANK];
        for axis in (0..self.rank()).rev() {
            out[axis] = flat % self.dims[axis];
            flat /= self.dims[axis];
        }
        out
    }

    pub fn center_coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.spacing(axis)
    }

    /// Coordinates of the center of the cell with flat index `flat`.
    pub fn center(&self, flat: usize) -> [f64; MAX_RANK] {
        let idx = self.multi_index(flat);
        let mut out = [0.0; MAX_RANK];
        for axis in 0..self.rank() {
            out[axis] = self.center_coord(axis, idx[axis]);
        }
        out
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + self.extent[axis]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        (0..self.rank()).all(|a| point[a] >= self.origin[a] && point[a] <= self.upper(a))
    }

    /// Clamp `point` into the closed bounding box.
    pub fn clamp_point(&self, point: &mut [f64]) {
        for axis in 0..self.rank() {
            point[axis] = point[axis].clamp(self.origin[axis], self.upper(axis));
        }
    }

    /// Index of the cell containing `point` (clamped to the box).
    pub fn cell_of(&self, point: &[f64]) -> usize {
        let mut flat = 0;
        for axis in 0..self.rank() {
            let s = (point[axis] - self.origin[axis]) / self.spacing(axis);
            let i = (s.floor().max(0.0) as usize).min(self.dims[axis] - 1);
            flat = flat * self.dims[axis] + i;
        }
        flat
    }

    /// Largest distance between two points of the box.
    pub fn diameter(&self) -> f64 {
        self.extent.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}
