use std::f64::consts::PI;

use crate::field::{io::read_field, GridSpec, ScalarField};

use super::{CliError, DensitySpec};

fn gaussian(grid: &GridSpec, center: &[f64], sigma: f64) -> ScalarField {
    let s2 = 2.0 * sigma * sigma;
    ScalarField::from_fn(grid.clone(), |x| {
        let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        (-r2 / s2).exp()
    })
}

fn unit_mass(field: ScalarField, what: &str) -> Result<ScalarField, CliError> {
    let mass = field.quadrature();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(CliError::Schema(format!("{what} has no mass on the grid")));
    }
    Ok(field.scaled(1.0 / mass))
}

fn tabulate(spec: &DensitySpec, grid: &GridSpec) -> Result<ScalarField, CliError> {
    match spec {
        DensitySpec::Gaussian { center, sigma, weight } => {
            Ok(unit_mass(gaussian(grid, center, *sigma), "gaussian")?.scaled(*weight))
        }
        DensitySpec::Ring { center, ring_radius, count, sigma, weight } => {
            let mut sum = ScalarField::zeros(grid.clone());
            for k in 0..*count {
                let th = 2.0 * PI * k as f64 / *count as f64;
                let c = [center[0] + ring_radius * th.cos(), center[1] + ring_radius * th.sin()];
                let g = gaussian(grid, &c, *sigma);
                sum.values_mut().iter_mut().zip(g.values()).for_each(|(s, v)| *s += v);
            }
            Ok(unit_mass(sum, "ring")?.scaled(*weight))
        }
        DensitySpec::Uniform { weight } => Ok(unit_mass(ScalarField::constant(grid.clone(), 1.0), "uniform")?.scaled(*weight)),
        DensitySpec::Mixture { components } => {
            let mut sum = ScalarField::zeros(grid.clone());
            for c in components {
                let part = tabulate(c, grid)?;
                sum.values_mut().iter_mut().zip(part.values()).for_each(|(s, v)| *s += v);
            }
            Ok(sum)
        }
        DensitySpec::File { path } => {
            let f = read_field(path)?;
            if f.grid() != grid {
                return Err(CliError::Schema(format!("{}: grid differs from the configured grid", path.display())));
            }
            if f.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(CliError::Schema(format!("{}: density must be finite and nonnegative", path.display())));
            }
            Ok(f)
        }
    }
}

/// Tabulates `spec` at cell centers and normalizes to unit mass on the box.
pub fn build_density(spec: &DensitySpec, grid: &GridSpec) -> Result<ScalarField, CliError> {
    unit_mass(tabulate(spec, grid)?, "density")
}
