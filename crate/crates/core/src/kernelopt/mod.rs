//! Optimal smoothing kernels: the Epanechnikov closed form and QP-optimal
//! kernels with moment, nonnegativity and support-exclusion constraints.

mod qp;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, GridSpec};

pub use qp::{qp_solve, QpProblem, QpSolution};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel support {support} exceeds the grid half-width {half_width}")]
    GridTooSmall { support: f64, half_width: f64 },
    #[error("grid too coarse to renormalize the kernel moments")]
    GridTooCoarse,
    #[error("infeasible kernel constraints: {0}")]
    Infeasible(String),
    #[error("equality constraints are rank deficient")]
    RankDeficient,
    #[error("exclusion region is not axis-separable: {0}")]
    NonSeparableExclusion(String),
    #[error("active-set solver exceeded {0} iterations")]
    QpIterationLimit(usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Closed interval `[lo, hi]` of kernel arguments.
pub type Interval = (f64, f64);

/// Tabulated 1D kernel on a symmetric node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    grid: GridSpec,
    values: Vec<f64>,
    second_moment: f64,
    support_mask: Vec<bool>,
    /// Slope of the piecewise-linear interpolant on each node interval.
    slopes: Vec<f64>,
}

impl Kernel1D {
    fn from_parts(grid: GridSpec, values: Vec<f64>, second_moment: f64, support_mask: Vec<bool>) -> Self {
        let dx = grid.spacing(0);
        let slopes = values.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
        Self {
            grid,
            values,
            second_moment,
            support_mask,
            slopes,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `a^2`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn support_mask(&self) -> &[bool] {
        &self.support_mask
    }

    pub fn dx(&self) -> f64 {
        self.grid.spacing(0)
    }

    pub fn half_width(&self) -> f64 {
        -self.node(0)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.grid.center_coord(0, i)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.node(i))
    }

    /// Discrete `(sum k dx, sum x k dx, sum x^2 k dx)`.
    pub fn moments(&self) -> [f64; 3] {
        let dx = self.dx();
        let mut m = [0.0; 3];
        for (x, k) in self.nodes().zip(&self.values) {
            m[0] += k * dx;
            m[1] += x * k * dx;
            m[2] += x * x * k * dx;
        }
        m
    }

    /// Discrete `sum k^2 dx`.
    pub fn roughness(&self) -> f64 {
        self.values.iter().map(|k| k * k).sum::<f64>() * self.dx()
    }

    /// Radius outside of which the interpolated kernel vanishes.
    pub fn support_radius(&self) -> f64 {
        let dx = self.dx();
        let b = self.half_width();
        self.nodes()
            .zip(&self.values)
            .filter(|(_, &k)| k > 0.0)
            .map(|(x, _)| (x.abs() + dx).min(b))
            .fold(0.0, f64::max)
    }

    fn locate(&self, u: f64) -> Option<(usize, f64)> {
        let b = self.half_width();
        if !(u >= -b && u <= b) {
            return None;
        }
        let s = (u + b) / self.dx();
        let last = self.values.len() - 2;
        let i = (s.floor() as usize).min(last);
        Some((i, s - i as f64))
    }

    /// Linear interpolation of the table; zero outside `[-B, B]`.
    pub fn evaluate(&self, u: f64) -> f64 {
        match self.locate(u) {
            Some((i, f)) => self.values[i] * (1.0 - f) + self.values[i + 1] * f,
            None => 0.0,
        }
    }

    /// Value and derivative of the interpolant at `u`.
    pub fn evaluate_with_slope(&self, u: f64) -> (f64, f64) {
        match self.locate(u) {
            Some((i, f)) => (self.values[i] * (1.0 - f) + self.values[i + 1] * f, self.slopes[i]),
            None => (0.0, 0.0),
        }
    }

    /// `(x, K(x))` rows.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,k")?;
        for (x, k) in self.nodes().zip(&self.values) {
            writeln!(out, "{x},{k}")?;
        }
        out.flush()
    }
}

/// Product kernel `K(u) = prod_k K_k(u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelND {
    factors: Vec<Kernel1D>,
}

impl KernelND {
    pub fn new(factors: Vec<Kernel1D>) -> Result<Self, KernelError> {
        if factors.is_empty() {
            return Err(KernelError::InvalidParams("a product kernel needs at least one factor".into()));
        }
        Ok(Self { factors })
    }

    /// Same 1D kernel on every axis.
    pub fn isotropic(factor: Kernel1D, rank: usize) -> Self {
        Self {
            factors: vec![factor; rank],
        }
    }

    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Kernel1D] {
        &self.factors
    }

    pub fn integral(&self) -> f64 {
        self.factors.iter().map(|f| f.moments()[0]).product()
    }

    /// Largest per-axis support radius; the support fits in the ball of
    /// radius `support_radius * sqrt(rank)`.
    pub fn support_radius(&self) -> f64 {
        self.factors.iter().map(Kernel1D::support_radius).fold(0.0, f64::max)
    }

    pub fn evaluate(&self, u: &[f64]) -> f64 {
        self.factors.iter().zip(u).map(|(f, &x)| f.evaluate(x)).product()
    }

    /// Value and gradient with respect to `u`.
    pub fn evaluate_with_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.rank();
        let mut vals = [0.0; crate::field::MAX_RANK];
        let mut slopes = [0.0; crate::field::MAX_RANK];
        for k in 0..d {
            (vals[k], slopes[k]) = self.factors[k].evaluate_with_slope(u[k]);
        }
        for k in 0..d {
            grad[k] = (0..d).map(|j| if j == k { slopes[j] } else { vals[j] }).product();
        }
        vals[..d].iter().product()
    }
}

fn check_node_grid(grid: &GridSpec) -> Result<f64, KernelError> {
    if grid.rank() != 1 {
        return Err(KernelError::InvalidParams(format!("kernel grids are 1D, got rank {}", grid.rank())));
    }
    let first = grid.center_coord(0, 0);
    let last = grid.center_coord(0, grid.dims()[0] - 1);
    if (first + last).abs() > 1e-9 * last.abs() {
        return Err(KernelError::InvalidParams(format!(
            "kernel grid must be symmetric about 0 (nodes {first} .. {last})"
        )));
    }
    Ok(last)
}

fn check_a(a: f64) -> Result<(), KernelError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(KernelError::InvalidParams(format!("second-moment parameter a must be positive, got {a}")));
    }
    Ok(())
}

/// Node grid on `[-2 a sqrt5, 2 a sqrt5]`.
pub fn default_grid(a: f64, nodes: usize) -> Result<GridSpec, KernelError> {
    check_a(a)?;
    Ok(GridSpec::symmetric_nodes(2.0 * a * 5f64.sqrt(), nodes)?)
}

/// `K^a(x) = 3/(4 a sqrt5) (1 - (x / (a sqrt5))^2)` on `|x| <= a sqrt5`,
/// tabulated and then corrected so the discrete moments are exact.
pub fn epanechnikov(a: f64, grid: &GridSpec) -> Result<Kernel1D, KernelError> {
    check_a(a)?;
    let half_width = check_node_grid(grid)?;
    let support = a * 5f64.sqrt();
    if support > half_width * (1.0 + 1e-12) {
        return Err(KernelError::GridTooSmall { support, half_width });
    }
    let nodes: Vec<f64> = (0..grid.dims()[0]).map(|i| grid.center_coord(0, i)).collect();
    let mut values: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let s = x / support;
            if s.abs() < 1.0 - 1e-12 {
                0.75 / support * (1.0 - s * s)
            } else {
                0.0
            }
        })
        .collect();

    // Kernel-weighted least-norm correction k_i (1 + c0 + c1 x + c2 x^2):
    // keeps the support and the sign for small corrections.
    let dx = grid.spacing(0);
    let target = Vector3::new(1.0, 0.0, a * a);
    let mut gram = Matrix3::zeros();
    let mut current = Vector3::zeros();
    for (&x, &k) in nodes.iter().zip(&values) {
        let phi = Vector3::new(1.0, x, x * x);
        gram += phi * phi.transpose() * (k * dx);
        current += phi * (k * dx);
    }
    let c = gram
        .lu()
        .solve(&(target - current))
        .ok_or(KernelError::GridTooCoarse)?;
    for (&x, k) in nodes.iter().zip(values.iter_mut()) {
        let factor = 1.0 + c[0] + c[1] * x + c[2] * x * x;
        if *k > 0.0 && factor <= 0.0 {
            return Err(KernelError::GridTooCoarse);
        }
        *k *= factor;
    }
    let mask = nodes.iter().map(|x| x.abs() <= support).collect();
    Ok(Kernel1D::from_parts(grid.clone(), values, a * a, mask))
}

fn moment_rows(nodes: &[f64], dx: f64, a: f64) -> Vec<(Vec<f64>, f64)> {
    vec![
        (nodes.iter().map(|_| dx).collect(), 1.0),
        (nodes.iter().map(|x| x * dx).collect(), 0.0),
        (nodes.iter().map(|x| x * x * dx).collect(), a * a),
    ]
}

/// A node is fixed at zero when either adjacent cell meets the interval, so
/// the linear interpolant vanishes on all of it.
fn excluded(x: f64, exclusion: &[Interval], dx: f64) -> bool {
    let reach = dx * (1.0 - 1e-9);
    exclusion.iter().any(|&(lo, hi)| x > lo - reach && x < hi + reach)
}

/// Minimum-roughness kernel with exact discrete moments `(1, 0, a^2)`,
/// `k >= 0` and `k = 0` on the exclusion intervals.
pub fn optimize_kernel_1d(grid: &GridSpec, a: f64, exclusion: &[Interval]) -> Result<Kernel1D, KernelError> {
    check_a(a)?;
    let half_width = check_node_grid(grid)?;
    // a^2 <= B^2 for any density on [-B, B], with equality only for atoms at +-B
    if a >= half_width {
        return Err(KernelError::GridTooSmall { support: a, half_width });
    }
    if let Some(&(lo, hi)) = exclusion.iter().find(|(lo, hi)| !(lo <= hi)) {
        return Err(KernelError::InvalidParams(format!("exclusion interval [{lo}, {hi}] is empty")));
    }
    let dx = grid.spacing(0);
    let nodes: Vec<f64> = (0..grid.dims()[0]).map(|i| grid.center_coord(0, i)).collect();
    let n = nodes.len();
    let fixed: Vec<bool> = nodes.iter().map(|&x| excluded(x, exclusion, dx)).collect();
    let problem = QpProblem {
        n,
        equality_rows: moment_rows(&nodes, dx, a),
        lower_bounds: vec![0.0; n],
        fixed_zero: fixed.clone(),
    };
    let solution = qp_solve(&problem).map_err(|e| match e {
        KernelError::RankDeficient => KernelError::Infeasible("too few admissible nodes for the moment constraints".into()),
        other => other,
    })?;
    let values = solution.x.iter().map(|v| v.max(0.0)).collect();
    let mask = fixed.iter().map(|f| !f).collect();
    Ok(Kernel1D::from_parts(grid.clone(), values, a * a, mask))
}

/// Union of axis-aligned boxes; a box leaves an axis unrestricted with the
/// interval `(-inf, inf)`. In JSON an infinite bound is `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclusion {
    #[serde(default, with = "open_bounds")]
    pub boxes: Vec<Vec<Interval>>,
}

mod open_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Interval;

    type Encoded = Vec<Vec<(Option<f64>, Option<f64>)>>;

    pub fn serialize<S: Serializer>(boxes: &[Vec<Interval>], s: S) -> Result<S::Ok, S::Error> {
        let finite = |v: f64| v.is_finite().then_some(v);
        let encoded: Encoded = boxes
            .iter()
            .map(|b| b.iter().map(|&(lo, hi)| (finite(lo), finite(hi))).collect())
            .collect();
        encoded.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Interval>>, D::Error> {
        let encoded = Encoded::deserialize(d)?;
        Ok(encoded
            .into_iter()
            .map(|b| {
                b.into_iter()
                    .map(|(lo, hi)| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
                    .collect()
            })
            .collect())
    }
}

impl Exclusion {
    pub fn contains(&self, point: &[f64]) -> bool {
        self.boxes
            .iter()
            .any(|b| b.iter().zip(point).all(|(&(lo, hi), &x)| x >= lo && x <= hi))
    }

    /// Per-axis interval lists when every box restricts at most one axis.
    pub fn per_axis(&self, rank: usize) -> Result<Vec<Vec<Interval>>, KernelError> {
        let mut out = vec![Vec::new(); rank];
        for (n, b) in self.boxes.iter().enumerate() {
            if b.len() != rank {
                return Err(KernelError::NonSeparableExclusion(format!(
                    "box {n} has {} intervals for rank {rank}",
                    b.len()
                )));
            }
            let restricted: Vec<usize> = (0..rank)
                .filter(|&k| b[k].0 > f64::NEG_INFINITY || b[k].1 < f64::INFINITY)
                .collect();
            match restricted.as_slice() {
                [] => {
                    return Err(KernelError::Infeasible(format!("box {n} excludes the whole space")));
                }
                [k] => out[*k].push(b[*k]),
                _ => {
                    return Err(KernelError::NonSeparableExclusion(format!(
                        "box {n} restricts axes {restricted:?}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

/// Separable product of per-axis optimal kernels.
pub fn optimize_kernel_nd(grids: &[GridSpec], a: f64, exclusion: &Exclusion) -> Result<KernelND, KernelError> {
    let per_axis = exclusion.per_axis(grids.len())?;
    let factors = grids
        .iter()
        .zip(&per_axis)
        .map(|(g, ex)| optimize_kernel_1d(g, a, ex))
        .collect::<Result<Vec<_>, _>>()?;
    KernelND::new(factors)
}

/// AMISE kernel constant `C1 = [(int K^2)^4 (int x^2 K)^2]^(1/5)`.
pub fn amise_c1(kernel: &Kernel1D) -> f64 {
    let r = kernel.roughness();
    let mu2 = kernel.moments()[2];
    (r.powi(4) * mu2 * mu2).powf(0.2)
}
