//! Transport between translated 1D Gaussians, where the optimal map is the
//! shift `x -> x + 0.4` and the cost is `0.4^2 / 2`.

use swomt::diagnostics::windowed_medians;
use swomt::field::{GridSpec, ScalarField};
use swomt::omt::{solve_bb, OmtParams, OmtSolution};

const SHIFT: f64 = 0.4;

fn gaussian(grid: &GridSpec, mean: f64, sigma: f64, mass: f64) -> ScalarField {
    let f = ScalarField::from_fn(grid.clone(), |x| (-(x[0] - mean).powi(2) / (2.0 * sigma * sigma)).exp());
    let q = f.quadrature();
    f.scaled(mass / q)
}

fn translate(mass: f64, forward: bool) -> OmtSolution {
    let grid = GridSpec::unit(1, 64).unwrap();
    let a = gaussian(&grid, 0.3, 0.05, mass);
    let b = gaussian(&grid, 0.7, 0.05, mass);
    let (from, to) = if forward { (a, b) } else { (b, a) };
    solve_bb(&from, &to, 32, &OmtParams::default()).unwrap()
}

#[test]
fn translation_energy_velocity_and_mass() {
    let s = translate(1.0, true);
    assert!(s.converged, "no convergence after {} iterations", s.iterations);
    let exact = 0.5 * SHIFT * SHIFT;
    assert!((s.energy - exact).abs() <= 0.05 * exact, "energy {}", s.energy);
    assert!(s.residual <= 1e-4, "residual {:e}", s.residual);

    let masses = s.field.level_masses();
    for m in &masses {
        assert!((m - masses[0]).abs() <= 1e-6 * masses[0], "{masses:?}");
    }

    let mut worst: f64 = 0.0;
    for (k, v) in s.velocity.iter().enumerate() {
        let rho = s.field.half_level_density(k);
        let max = rho.iter().cloned().fold(0.0, f64::max);
        for (vi, ri) in v.component(0).iter().zip(&rho) {
            if *ri > 0.01 * max {
                worst = worst.max((vi - SHIFT).abs());
            }
        }
    }
    assert!(worst <= 0.1 * SHIFT, "velocity deviation {worst}");

    let max = s.field.rho().iter().cloned().fold(0.0, f64::max);
    let min = s.field.rho().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min >= -1e-3 * max, "min density {min}");
}

#[test]
fn windowed_energy_does_not_increase() {
    let s = translate(1.0, true);
    let skip = s.log.len() / 10;
    let energies: Vec<f64> = s.log[skip..].iter().map(|r| r.energy).collect();
    let medians = windowed_medians(&energies, 50);
    assert!(medians.len() >= 2);
    for w in medians.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn reversed_transport_costs_the_same() {
    let forward = translate(1.0, true);
    let backward = translate(1.0, false);
    assert!(forward.converged && backward.converged);
    let rel = (forward.energy - backward.energy).abs() / forward.energy;
    assert!(rel <= 0.01, "{} vs {}", forward.energy, backward.energy);
    let masses = backward.field.level_masses();
    for m in &masses {
        assert!((m - masses[0]).abs() <= 1e-6 * masses[0]);
    }
}

#[test]
fn doubling_mass_doubles_energy() {
    let one = translate(1.0, true);
    let two = translate(2.0, true);
    let rel = (two.energy - 2.0 * one.energy).abs() / (2.0 * one.energy);
    assert!(rel <= 1e-6, "{} vs 2 * {}", two.energy, one.energy);
}
