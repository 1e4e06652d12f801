//! Kernel density estimates from agent positions, including the restricted
//! (neighbour-only) estimate each agent can form on its own.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{GridSpec, ScalarField, MAX_RANK};
use crate::kernelopt::KernelND;
use crate::swarm::SwarmState;

#[derive(Debug, Error)]
pub enum KdeError {
    #[error("kernel support h*s*sqrt(d) = {support} exceeds the interaction radius {radius}")]
    KernelSupportViolation { support: f64, radius: f64 },
    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),
    #[error("kernel rank {kernel} does not match state rank {state}")]
    RankMismatch { kernel: usize, state: usize },
}

/// `h(N) = c N^(-exponent)` with `0 < exponent < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BandwidthRule {
    pub c: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_exponent() -> f64 {
    0.2
}

impl BandwidthRule {
    pub fn new(c: f64, exponent: f64) -> Result<Self, KdeError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(KdeError::InvalidBandwidth(format!("scale c must be positive, got {c}")));
        }
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(KdeError::InvalidBandwidth(format!("exponent must lie in (0, 1), got {exponent}")));
        }
        Ok(Self { c, exponent })
    }
}

pub fn bandwidth(rule: &BandwidthRule, n: usize) -> f64 {
    rule.c * (n as f64).powf(-rule.exponent)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub sample_count: usize,
    pub bandwidth: f64,
}

/// `(1/(N h^d)) sum_j prod_k K_k((x_k - r_jk) / h)` and its gradient in `x`.
/// `n_total` is the global agent count even for restricted sample lists.
pub fn estimate_at<'a>(
    point: &[f64],
    samples: impl IntoIterator<Item = &'a [f64]>,
    kernel: &KernelND,
    h: f64,
    n_total: usize,
) -> DensityEstimate {
    let d = kernel.rank();
    let mut value = 0.0;
    let mut gradient = vec![0.0; d];
    let mut u = [0.0; MAX_RANK];
    let mut g = [0.0; MAX_RANK];
    let mut count = 0;
    for r in samples {
        count += 1;
        for k in 0..d {
            u[k] = (point[k] - r[k]) / h;
        }
        value += kernel.evaluate_with_gradient(&u[..d], &mut g[..d]);
        for k in 0..d {
            gradient[k] += g[k];
        }
    }
    let norm = 1.0 / (n_total.max(1) as f64 * h.powi(d as i32));
    DensityEstimate {
        value: value * norm,
        gradient: gradient.into_iter().map(|v| v * norm / h).collect(),
        sample_count: count,
        bandwidth: h,
    }
}

/// The estimate an agent forms from its neighbours only.
#[derive(Debug, Clone)]
pub struct StateDependentKde {
    kernel: KernelND,
    h: f64,
    include_self: bool,
}

impl StateDependentKde {
    /// Fails unless the scaled kernel support fits in the interaction ball.
    pub fn new(kernel: KernelND, h: f64, radius: f64) -> Result<Self, KdeError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(KdeError::InvalidBandwidth(format!("h must be positive, got {h}")));
        }
        let support = h * kernel.support_radius() * (kernel.rank() as f64).sqrt();
        if support > radius * (1.0 + 1e-12) {
            return Err(KdeError::KernelSupportViolation { support, radius });
        }
        Ok(Self {
            kernel,
            h,
            include_self: false,
        })
    }

    /// Counts the agent's own position as a sample (off by default).
    pub fn with_self_sample(mut self, include: bool) -> Self {
        self.include_self = include;
        self
    }

    pub fn kernel(&self) -> &KernelND {
        &self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn estimate(&self, agent: usize, state: &SwarmState) -> DensityEstimate {
        let own = if self.include_self { Some(agent) } else { None };
        let samples = state
            .neighbors(agent)
            .iter()
            .copied()
            .chain(own)
            .map(|j| state.position(j));
        estimate_at(state.position(agent), samples, &self.kernel, self.h, state.len())
    }
}

pub fn estimate_state_dependent(
    agent: usize,
    state: &SwarmState,
    kde: &StateDependentKde,
) -> Result<DensityEstimate, KdeError> {
    if kde.kernel.rank() != state.rank() {
        return Err(KdeError::RankMismatch {
            kernel: kde.kernel.rank(),
            state: state.rank(),
        });
    }
    Ok(kde.estimate(agent, state))
}

/// Global estimate at every cell center from all agents. Each agent's
/// contribution is added only to the cells inside its kernel support, in
/// agent order, so every cell equals `estimate_at` at its center.
pub fn estimate_on_grid(state: &SwarmState, grid: &GridSpec, kernel: &KernelND, h: f64) -> ScalarField {
    let d = grid.rank();
    assert_eq!(d, kernel.rank(), "grid and kernel rank differ");
    let reach: Vec<f64> = kernel.factors().iter().map(|f| f.half_width() * h).collect();
    let n_total = state.len();
    let norm = 1.0 / (n_total.max(1) as f64 * h.powi(d as i32));
    // Cell ranges per agent and axis, then one parallel pass over rows of the
    // first axis.
    let ranges: Vec<[(usize, usize); MAX_RANK]> = (0..n_total)
        .map(|j| {
            let r = state.position(j);
            let mut out = [(0, 0); MAX_RANK];
            for k in 0..d {
                let hk = grid.spacing(k);
                let lo = ((r[k] - reach[k] - grid.origin()[k]) / hk - 0.5).floor().max(0.0) as usize;
                let hi = ((r[k] + reach[k] - grid.origin()[k]) / hk - 0.5).ceil();
                let hi = if hi < 0.0 { 0 } else { (hi as usize + 1).min(grid.dims()[k]) };
                out[k] = (lo.min(hi), hi);
            }
            out
        })
        .collect();
    let row = grid.len() / grid.dims()[0];
    let mut values = vec![0.0; grid.len()];
    values.par_chunks_mut(row).enumerate().for_each(|(i0, chunk)| {
        let mut u = [0.0; MAX_RANK];
        for (j, range) in ranges.iter().enumerate() {
            if i0 < range[0].0 || i0 >= range[0].1 {
                continue;
            }
            let r = state.position(j);
            for (local, slot) in chunk.iter_mut().enumerate() {
                let flat = i0 * row + local;
                let idx = grid.multi_index(flat);
                if (1..d).any(|k| idx[k] < range[k].0 || idx[k] >= range[k].1) {
                    continue;
                }
                let c = grid.center(flat);
                for k in 0..d {
                    u[k] = (c[k] - r[k]) / h;
                }
                *slot += kernel.evaluate(&u[..d]);
            }
        }
        chunk.iter_mut().for_each(|v| *v *= norm);
    });
    ScalarField::new(grid.clone(), values).expect("grid length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelopt::{epanechnikov, optimize_kernel_1d};
    use crate::swarm::{InteractionWeight, SwarmState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn epan(rank: usize) -> KernelND {
        let g = GridSpec::symmetric_nodes(2.0, 201).unwrap();
        KernelND::isotropic(epanechnikov(5f64.powf(-0.5), &g).unwrap(), rank)
    }

    #[test]
    fn bandwidth_rule() {
        let unit = BandwidthRule::new(1.0, 0.2).unwrap();
        assert_eq!(bandwidth(&unit, 1), 1.0);
        assert!((bandwidth(&unit, 32) - 0.5).abs() < 1e-15);
        let nh: Vec<f64> = [10, 100, 1000].iter().map(|&n| n as f64 * bandwidth(&unit, n)).collect();
        assert!(nh[0] < nh[1] && nh[1] < nh[2]);
        assert!(BandwidthRule::new(1.0, 1.0).is_err());
    }

    #[test]
    fn single_sample_peak() {
        let k = epan(1);
        let e = estimate_at(&[0.3], [&[0.3][..]], &k, 1.0, 1);
        assert!((e.value - 0.75).abs() < 1e-3, "{}", e.value);
        assert_eq!(e.sample_count, 1);
        let none = estimate_at(&[0.3], std::iter::empty(), &k, 1.0, 1);
        assert_eq!(none.value, 0.0);
        assert_eq!(none.gradient, vec![0.0]);
    }

    fn state_from(points: &[[f64; 2]], radius: f64) -> SwarmState {
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        SwarmState::from_positions(2, flat, &InteractionWeight::proximity(radius), 0).unwrap()
    }

    #[test]
    fn state_dependent_cases() {
        let g = GridSpec::symmetric_nodes(2.0, 201).unwrap();
        let kernel = KernelND::isotropic(epanechnikov(0.1, &g).unwrap(), 2);
        let h = 0.05;
        let kde = StateDependentKde::new(kernel.clone(), h, 0.1).unwrap();
        // isolated agent
        let s = state_from(&[[0.2, 0.2], [0.8, 0.8]], 0.1);
        let e = estimate_state_dependent(0, &s, &kde).unwrap();
        assert_eq!((e.value, e.gradient.clone()), (0.0, vec![0.0, 0.0]));
        // coincident pair: each sees the other only
        let s = state_from(&[[0.5, 0.5], [0.5, 0.5]], 0.1);
        let e = estimate_state_dependent(0, &s, &kde).unwrap();
        let k0 = kernel.evaluate(&[0.0, 0.0]);
        assert!((e.value - k0 / (2.0 * h * h)).abs() < 1e-12 * e.value);
        assert_eq!(e.sample_count, 1);
        let with_self = kde.clone().with_self_sample(true).estimate(0, &s);
        assert!((with_self.value - 2.0 * e.value).abs() < 1e-12 * e.value);
    }

    #[test]
    fn full_graph_matches_global_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 2]> = (0..40).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let s = state_from(&pts, 2.0);
        let kernel = epan(2);
        let kde = StateDependentKde::new(kernel.clone(), 0.3, 2.0).unwrap();
        for i in [0, 7, 39] {
            let local = kde.estimate(i, &s);
            let others = (0..40).filter(|&j| j != i).map(|j| s.position(j));
            let global = estimate_at(s.position(i), others, &kernel, 0.3, 40);
            assert!((local.value - global.value).abs() <= 1e-12 * global.value.max(1.0));
        }
    }

    #[test]
    fn support_violation_is_rejected() {
        let kernel = epan(2);
        // support radius 1 (in u), h = 0.01, sqrt2 * 0.01 > 0.01
        let r = StateDependentKde::new(kernel, 0.01, 0.01);
        assert!(matches!(r, Err(KdeError::KernelSupportViolation { .. })));
    }

    #[test]
    fn locality_ignores_non_neighbours() {
        let pts = [[0.5, 0.5], [0.52, 0.5], [0.9, 0.9]];
        let mut s = state_from(&pts, 0.05);
        let g = GridSpec::symmetric_nodes(2.0, 201).unwrap();
        let kernel = KernelND::isotropic(epanechnikov(0.2, &g).unwrap(), 2);
        let kde = StateDependentKde::new(kernel, 0.05, 0.05).unwrap();
        let before = kde.estimate(0, &s);
        s.positions_mut()[4] = 0.1;
        s.positions_mut()[5] = 0.95;
        let after = kde.estimate(0, &s);
        assert_eq!(before, after);
    }

    #[test]
    fn grid_matches_pointwise_and_integrates() {
        let grid = GridSpec::unit(2, 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 2]> = (0..30).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let s = state_from(&pts, 0.1);
        let kernel = epan(2);
        let h = 0.15;
        let field = estimate_on_grid(&s, &grid, &kernel, h);
        for _ in 0..50 {
            let c = rng.gen_range(0..grid.len());
            let center = grid.center(c);
            let e = estimate_at(&center[..2], (0..30).map(|j| s.position(j)), &kernel, h, 30);
            assert!((field.values()[c] - e.value).abs() <= 1e-12 * e.value.max(1.0));
        }
        assert!(field.values().iter().all(|&v| v >= 0.0));

        // a single agent away from the walls: the midpoint rule of a smooth
        // kernel with support well inside the box
        let one = state_from(&[[0.5, 0.5]], 0.1);
        let fine = GridSpec::unit(2, 256).unwrap();
        let f = estimate_on_grid(&one, &fine, &kernel, 0.2);
        assert!((f.quadrature() - 1.0).abs() < 1e-3, "{}", f.quadrature());
        // near a corner the truncated mass is the kernel mass outside the box
        let corner = state_from(&[[0.05, 0.1]], 0.1);
        let f = estimate_on_grid(&corner, &fine, &kernel, 0.2);
        let inside = |r: f64| {
            let k1 = &kernel.factors()[0];
            // 1D kernel mass of u in [-r/h, inf)
            let steps = 20000;
            let lo = (-r / 0.2).max(-2.0);
            let du = (2.0 - lo) / steps as f64;
            (0..steps).map(|i| k1.evaluate(lo + (i as f64 + 0.5) * du) * du).sum::<f64>()
        };
        let expected = inside(0.05) * inside(0.1);
        assert!((f.quadrature() - expected).abs() < 2e-3, "{} vs {expected}", f.quadrature());
    }

    #[test]
    fn constrained_kernel_estimates_are_nonnegative() {
        let g = GridSpec::symmetric_nodes(2.0, 101).unwrap();
        let k1 = optimize_kernel_1d(&g, 5f64.powf(-0.5), &[(0.25, 0.75)]).unwrap();
        let kernel = KernelND::isotropic(k1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<[f64; 1]> = (0..50).map(|_| [rng.gen_range(-1.0..1.0)]).collect();
        for _ in 0..200 {
            let x = rng.gen_range(-2.0..2.0);
            let e = estimate_at(&[x], samples.iter().map(|s| &s[..]), &kernel, 0.3, 50);
            assert!(e.value >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let kernel = epan(2);
        let h = 0.2;
        let dx = kernel.factors()[0].dx();
        let half = kernel.factors()[0].half_width();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<[f64; 2]> = (0..5).map(|_| [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)]).collect();
        let step = 0.01 * h * dx;
        let mut checked = 0;
        while checked < 100 {
            let x = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
            // skip points whose stencil crosses a table node for some sample
            let crosses = samples.iter().any(|s| {
                (0..2).any(|k| {
                    let a = ((x[k] - step - s[k]) / h + half) / dx;
                    let b = ((x[k] + step - s[k]) / h + half) / dx;
                    a.floor() != b.floor()
                })
            });
            if crosses {
                continue;
            }
            let e = estimate_at(&x, samples.iter().map(|s| &s[..]), &kernel, h, 5);
            if e.value == 0.0 {
                continue;
            }
            checked += 1;
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += step;
                xm[k] -= step;
                let fp = estimate_at(&xp, samples.iter().map(|s| &s[..]), &kernel, h, 5).value;
                let fm = estimate_at(&xm, samples.iter().map(|s| &s[..]), &kernel, h, 5).value;
                let fd = (fp - fm) / (2.0 * step);
                let scale = e.gradient.iter().map(|g| g.abs()).fold(0.0, f64::max);
                assert!((fd - e.gradient[k]).abs() <= 1e-4 * scale, "{fd} vs {}", e.gradient[k]);
            }
        }
    }
}
