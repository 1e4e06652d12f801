/// Proximal map of `gamma * B` with `B(rho, m) = |m|^2 / (2 rho)`.
///
/// Returns `(rho, s)` such that the minimizer is `(rho, s * m_tilde)`; only
/// `|m_tilde|^2` is needed. For a fixed `rho > 0` the optimal momentum is
/// `rho m_tilde / (rho + gamma)`; substituting leaves the scalar equation
/// `g(rho) = rho - rho_tilde - c / (rho + gamma)^2 = 0` with
/// `c = gamma |m_tilde|^2 / 2`, i.e. the largest root of the cubic
/// `(rho - rho_tilde)(rho + gamma)^2 - c`. `g` is increasing and concave on
/// `rho > 0`, so Newton from the left converges monotonically.
pub(crate) fn prox_scalar(rho_tilde: f64, m_norm2: f64, gamma: f64) -> (f64, f64) {
    let c = 0.5 * gamma * m_norm2;
    let g = |r: f64| r - rho_tilde - c / ((r + gamma) * (r + gamma));
    let lo0 = rho_tilde.max(0.0);
    if g(0.0) >= 0.0 {
        return (0.0, 0.0);
    }
    if c == 0.0 {
        return (lo0, 1.0);
    }
    let mut lo = lo0;
    let mut hi = lo0 + c / ((lo0 + gamma) * (lo0 + gamma));
    let mut r = lo;
    for _ in 0..100 {
        let d = r + gamma;
        let gr = r - rho_tilde - c / (d * d);
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let step = gr / (1.0 + 2.0 * c / (d * d * d));
        if step.abs() <= 1e-15 * r.max(f64::MIN_POSITIVE) {
            break;
        }
        let next = r - step;
        r = if next >= lo && next <= hi { next } else { 0.5 * (lo + hi) };
    }
    (r, r / (r + gamma))
}

/// Minimizer of `1/2 |(rho, m) - (rho_tilde, m_tilde)|^2 + gamma B(rho, m)`.
pub fn prox_energy(rho: f64, m: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let m2: f64 = m.iter().map(|v| v * v).sum();
    let (r, s) = prox_scalar(rho, m2, gamma);
    (r, m.iter().map(|v| v * s).collect())
}
