//! Convergence certificates: density error, Lyapunov functional, MISE and
//! agent speed statistics.

use std::io::Write;
use std::path::Path;

use crate::field::{FieldError, ScalarField};
use crate::swarm::SwarmState;

/// `Phi = rho_hat - rho1`.
pub fn error_field(rho_hat: &ScalarField, rho1: &ScalarField) -> Result<ScalarField, FieldError> {
    rho_hat.sub(rho1)
}

/// `V = int |grad Phi|^2 dx`.
pub fn lyapunov(rho_hat: &ScalarField, rho1: &ScalarField) -> Result<f64, FieldError> {
    Ok(error_field(rho_hat, rho1)?.gradient().norm_squared().quadrature())
}

/// Integrated squared error `int (rho_hat - rho1)^2 dx`.
pub fn ise(rho_hat: &ScalarField, rho1: &ScalarField) -> Result<f64, FieldError> {
    let phi = error_field(rho_hat, rho1)?;
    Ok(phi.dot(&phi))
}

/// Seed average of the integrated squared error.
pub fn mise(estimates: &[ScalarField], truth: &ScalarField) -> Result<f64, FieldError> {
    if estimates.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for e in estimates {
        total += ise(e, truth)?;
    }
    Ok(total / estimates.len() as f64)
}

/// `(max, mean)` of the last applied agent speeds.
pub fn speed_stats(state: &SwarmState) -> (f64, f64) {
    let n = state.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let speeds = (0..n).map(|i| state.velocity(i).iter().map(|v| v * v).sum::<f64>().sqrt());
    let (max, sum) = speeds.fold((0.0f64, 0.0), |(m, s), v| (m.max(v), s + v));
    (max, sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub time: f64,
    pub lyapunov: f64,
    pub error_l2: f64,
    pub total_mass_estimate: f64,
    pub max_speed: f64,
    pub mean_speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; time must increase strictly.
    pub fn push(&mut self, row: MetricsRow) -> Result<(), String> {
        if let Some(last) = self.rows.last() {
            if !(row.time > last.time) {
                return Err(format!("metrics time {} does not follow {}", row.time, last.time));
            }
        }
        if !(row.lyapunov >= 0.0) {
            return Err(format!("negative Lyapunov value {}", row.lyapunov));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "time,lyapunov,errorL2,totalMassEstimate,maxSpeed,meanSpeed")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.time, r.lyapunov, r.error_l2, r.total_mass_estimate, r.max_speed, r.mean_speed
            )?;
        }
        out.flush()
    }
}

/// Median over each window of `window` consecutive values (non-overlapping).
pub fn windowed_medians(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                0.5 * (v[m - 1] + v[m])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use crate::swarm::InteractionWeight;

    #[test]
    fn error_field_cases() {
        let g = GridSpec::unit(1, 4).unwrap();
        let a = ScalarField::new(g.clone(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = ScalarField::new(g.clone(), vec![0.5, 2.5, 3.0, 1.0]).unwrap();
        assert_eq!(error_field(&a, &a).unwrap().values(), &[0.0; 4]);
        let phi = error_field(&a, &b).unwrap();
        assert_eq!(phi.values(), &[0.5, -0.5, 0.0, 3.0]);
        assert!((phi.quadrature() - (a.quadrature() - b.quadrature())).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_cases() {
        let g = GridSpec::unit(1, 2048).unwrap();
        let zero = ScalarField::zeros(g.clone());
        assert_eq!(lyapunov(&ScalarField::constant(g.clone(), 3.0), &zero).unwrap(), 0.0);
        let s = ScalarField::from_fn(g.clone(), |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        let v = lyapunov(&s, &zero).unwrap();
        let expected = 2.0 * std::f64::consts::PI.powi(2);
        assert!((v - expected).abs() < 1e-2 * expected, "{v}");
        let shifted = ScalarField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).sin() + 5.0);
        assert!((lyapunov(&shifted, &zero).unwrap() - v).abs() < 1e-9 * v);
    }

    #[test]
    fn lyapunov_vanishes_only_for_constant_error() {
        let g = GridSpec::unit(2, 6).unwrap();
        // integer-valued fields so the dyadic shift is exact
        let rho1 = ScalarField::from_fn(g.clone(), |x| (6.0 * x[0]).floor() + 2.0 * (6.0 * x[1]).floor());
        let shifted = ScalarField::new(g.clone(), rho1.values().iter().map(|v| v + 0.25).collect()).unwrap();
        assert_eq!(lyapunov(&shifted, &rho1).unwrap(), 0.0);
        let mut bumped = shifted.clone();
        bumped.values_mut()[7] += 1e-3;
        assert!(lyapunov(&bumped, &rho1).unwrap() > 0.0);
    }

    #[test]
    fn mise_cases() {
        let g = GridSpec::unit(1, 2).unwrap();
        let t = ScalarField::new(g.clone(), vec![1.0, 1.0]).unwrap();
        assert_eq!(mise(&[t.clone()], &t).unwrap(), 0.0);
        let a = ScalarField::new(g.clone(), vec![2.0, 1.0]).unwrap();
        let b = ScalarField::new(g.clone(), vec![1.0, 3.0]).unwrap();
        // ISE(a) = 1 * 0.5, ISE(b) = 4 * 0.5
        assert!((mise(&[a.clone()], &t).unwrap() - 0.5).abs() < 1e-15);
        assert!((mise(&[a, b], &t).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn speed_cases() {
        let w = InteractionWeight::proximity(0.1);
        let mut s = SwarmState::from_positions(2, vec![0.0; 8], &w, 0).unwrap();
        assert_eq!(speed_stats(&s), (0.0, 0.0));
        s.velocities_mut()[0] = 2.0;
        assert_eq!(speed_stats(&s), (2.0, 0.5));
        let before = {
            s.velocities_mut()[3] = 1.0;
            s.velocities_mut()[4] = -0.5;
            speed_stats(&s)
        };
        let th: f64 = 0.7;
        let v = s.velocities_mut();
        for i in 0..4 {
            let (x, y) = (v[2 * i], v[2 * i + 1]);
            v[2 * i] = th.cos() * x - th.sin() * y;
            v[2 * i + 1] = th.sin() * x + th.cos() * y;
        }
        let after = speed_stats(&s);
        assert!((before.0 - after.0).abs() < 1e-12 && (before.1 - after.1).abs() < 1e-12);
    }

    #[test]
    fn metrics_time_must_increase() {
        let row = MetricsRow {
            time: 1.0,
            lyapunov: 0.0,
            error_l2: 0.0,
            total_mass_estimate: 1.0,
            max_speed: 0.0,
            mean_speed: 0.0,
        };
        let mut log = MetricsLog::new();
        log.push(row).unwrap();
        assert!(log.push(row).is_err());
        assert!(log.push(MetricsRow { time: 2.0, lyapunov: -1.0, ..row }).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(windowed_medians(&[3.0, 1.0, 2.0, 9.0, 7.0, 8.0, 5.0], 3), vec![2.0, 8.0]);
    }
}
