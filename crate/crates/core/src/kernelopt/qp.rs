//! Least-norm quadratic program with equality rows and nonnegativity bounds.
//!
//! Dual active-set method of Goldfarb and Idnani specialised to the identity
//! Hessian. Starting from the least-norm point of the equality system, the
//! most violated bound is added per outer iteration; partial steps drop bounds
//! whose multipliers would turn negative. Because the only inequalities are
//! coordinate bounds, every step reduces to a Gram solve with the equality
//! rows restricted to the currently free variables.

use nalgebra::{DMatrix, DVector};

use super::KernelError;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    /// `(coefficients, rhs)` with `coefficients.len() == n`.
    pub equality_rows: Vec<(Vec<f64>, f64)>,
    /// Per variable: `0.0` or `f64::NEG_INFINITY`.
    pub lower_bounds: Vec<f64>,
    pub fixed_zero: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of `1/2 |x|^2` against the equality rows.
    pub equality_multipliers: Vec<f64>,
    /// Nonnegative multiplier per bounded variable (zero when inactive).
    pub bound_multipliers: Vec<f64>,
    pub active_set_changes: usize,
}

impl QpSolution {
    /// `|x|^2`.
    pub fn objective(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }

    /// Max-norm of `x - E^T lambda - mu` over the non-fixed variables.
    pub fn stationarity_residual(&self, problem: &QpProblem) -> f64 {
        (0..problem.n)
            .filter(|&i| !problem.fixed_zero[i])
            .map(|i| {
                let et: f64 = problem
                    .equality_rows
                    .iter()
                    .zip(&self.equality_multipliers)
                    .map(|((row, _), l)| row[i] * l)
                    .sum();
                (self.x[i] - et - self.bound_multipliers[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn complementarity(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.bound_multipliers)
            .map(|(x, m)| (x * m).abs())
            .fold(0.0, f64::max)
    }

    pub fn equality_residual(&self, problem: &QpProblem) -> f64 {
        problem
            .equality_rows
            .iter()
            .map(|(row, rhs)| (row.iter().zip(&self.x).map(|(a, x)| a * x).sum::<f64>() - rhs).abs())
            .fold(0.0, f64::max)
    }
}

struct Reduced<'a> {
    rows: &'a [(Vec<f64>, f64)],
    m: usize,
}

impl Reduced<'_> {
    fn gram(&self, free: &[bool]) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, KernelError> {
        let mut g = DMatrix::zeros(self.m, self.m);
        for p in 0..self.m {
            for q in 0..=p {
                let s: f64 = self.rows[p]
                    .0
                    .iter()
                    .zip(&self.rows[q].0)
                    .zip(free)
                    .filter(|(_, &f)| f)
                    .map(|((a, b), _)| a * b)
                    .sum();
                g[(p, q)] = s;
                g[(q, p)] = s;
            }
        }
        g.cholesky().ok_or(KernelError::RankDeficient)
    }

    /// `E^T w` at variable `i`.
    fn et(&self, w: &DVector<f64>, i: usize) -> f64 {
        self.rows.iter().zip(w.iter()).map(|((row, _), w)| row[i] * w).sum()
    }

    fn column(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.m, self.rows.iter().map(|(row, _)| row[i]))
    }

    fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.m, self.rows.iter().map(|(_, b)| *b))
    }
}

fn validate(problem: &QpProblem) -> Result<(), KernelError> {
    let n = problem.n;
    if problem.lower_bounds.len() != n || problem.fixed_zero.len() != n {
        return Err(KernelError::InvalidParams("bound and fixedZero lengths must equal n".into()));
    }
    if let Some((row, _)) = problem.equality_rows.iter().find(|(row, _)| row.len() != n) {
        return Err(KernelError::InvalidParams(format!(
            "equality row has {} coefficients, expected {n}",
            row.len()
        )));
    }
    if problem.lower_bounds.iter().any(|&l| !(l == 0.0 || l == f64::NEG_INFINITY)) {
        return Err(KernelError::InvalidParams("lower bounds must be 0 or -inf".into()));
    }
    let m = problem.equality_rows.len();
    if m == 0 {
        return Ok(());
    }
    let free: Vec<usize> = (0..n).filter(|&i| !problem.fixed_zero[i]).collect();
    if free.len() < m {
        return Err(KernelError::RankDeficient);
    }
    let e = DMatrix::from_fn(m, free.len(), |r, c| problem.equality_rows[r].0[free[c]]);
    let sv = e.singular_values();
    let largest = sv.max();
    if !(largest > 0.0) || sv.iter().any(|&s| s <= 1e-12 * largest * m.max(free.len()) as f64) {
        return Err(KernelError::RankDeficient);
    }
    Ok(())
}

/// Global minimizer of `|x|^2` subject to the problem's constraints.
pub fn qp_solve(problem: &QpProblem) -> Result<QpSolution, KernelError> {
    validate(problem)?;
    let n = problem.n;
    let red = Reduced {
        rows: &problem.equality_rows,
        m: problem.equality_rows.len(),
    };
    let bounded: Vec<bool> = (0..n)
        .map(|i| !problem.fixed_zero[i] && problem.lower_bounds[i] == 0.0)
        .collect();
    // free[i]: not fixed and not an active bound
    let mut free: Vec<bool> = problem.fixed_zero.iter().map(|f| !f).collect();
    let mut active = vec![false; n];
    let mut u = vec![0.0; n];
    let b = red.rhs();

    // Optimum for the current active set: x_F = E_F^T G^{-1} b.
    let optimum = |free: &[bool], chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>| -> (Vec<f64>, DVector<f64>) {
        let lambda = chol.solve(&b);
        let x = (0..n).map(|i| if free[i] { red.et(&lambda, i) } else { 0.0 }).collect();
        (x, lambda)
    };

    let mut chol = red.gram(&free)?;
    let (mut x, _) = optimum(&free, &chol);
    let mut changes = 0;
    let cap = 50 * n + 1000;

    loop {
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let violated = (0..n)
            .filter(|&i| bounded[i] && !active[i] && x[i] < -1e-13 * scale)
            .min_by(|&i, &j| x[i].total_cmp(&x[j]));
        let Some(p) = violated else { break };
        let mut u_p = 0.0;
        loop {
            changes += 1;
            if changes > cap {
                return Err(KernelError::QpIterationLimit(cap));
            }
            let w = chol.solve(&red.column(p));
            let z_p = 1.0 - red.et(&w, p);
            let scale_p = 1.0 + red.column(p).norm_squared();
            // partial step limit from the active bounds' multipliers
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in (0..n).filter(|&j| active[j]) {
                let r_j = -red.et(&w, j);
                if r_j > 1e-14 && u[j] / r_j < t1 {
                    t1 = u[j] / r_j;
                    drop = Some(j);
                }
            }
            let t2 = if z_p > 1e-12 * scale_p { -x[p] / z_p } else { f64::INFINITY };
            let t = t1.min(t2);
            if t == f64::INFINITY {
                return Err(KernelError::Infeasible(format!("bound on variable {p} cannot be satisfied")));
            }
            for j in (0..n).filter(|&j| active[j]) {
                u[j] += t * red.et(&w, j);
            }
            u_p += t;
            if t2.is_finite() {
                for i in (0..n).filter(|&i| free[i]) {
                    let z_i = if i == p { 1.0 } else { 0.0 } - red.et(&w, i);
                    x[i] += t * z_i;
                }
            }
            if t2 <= t1 {
                active[p] = true;
                free[p] = false;
                u[p] = u_p;
                chol = red.gram(&free)?;
                let (xs, lambda) = optimum(&free, &chol);
                x = xs;
                for j in (0..n).filter(|&j| active[j]) {
                    u[j] = (-red.et(&lambda, j)).max(0.0);
                }
                break;
            }
            let j = drop.expect("finite partial step has a constraint to drop");
            active[j] = false;
            free[j] = true;
            u[j] = 0.0;
            chol = red.gram(&free)?;
        }
    }

    let (mut x_final, lambda) = optimum(&free, &chol);
    // round-off below the violation threshold
    for (x, _) in x_final.iter_mut().zip(&bounded).filter(|(_, &b)| b) {
        *x = x.max(0.0);
    }
    let bound_multipliers = (0..n)
        .map(|i| if active[i] { (-red.et(&lambda, i)).max(0.0) } else { 0.0 })
        .collect();
    Ok(QpSolution {
        x: x_final,
        equality_multipliers: lambda.iter().copied().collect(),
        bound_multipliers,
        active_set_changes: changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nonneg(n: usize, rows: Vec<(Vec<f64>, f64)>) -> QpProblem {
        QpProblem {
            n,
            equality_rows: rows,
            lower_bounds: vec![0.0; n],
            fixed_zero: vec![false; n],
        }
    }

    #[test]
    fn interior_optimum_is_least_norm() {
        // E = [[1, 1, 1, 1], [0, 1, 2, 3]], b = [4, 6]: least-norm point is positive
        let e = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![4.0, 6.0]);
        let closed = e.transpose() * (&e * e.transpose()).try_inverse().unwrap() * &b;
        let p = nonneg(4, vec![(vec![1.0, 1.0, 1.0, 1.0], 4.0), (vec![0.0, 1.0, 2.0, 3.0], 6.0)]);
        let s = qp_solve(&p).unwrap();
        for i in 0..4 {
            assert!((s.x[i] - closed[i]).abs() < 1e-12);
        }
        assert!(s.bound_multipliers.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn fully_determined_by_fixed_zero() {
        let mut p = nonneg(5, vec![(vec![1.0, 2.0, 1.0, 1.0, 0.0], 3.0), (vec![0.0, 1.0, 1.0, -1.0, 1.0], 1.0)]);
        p.fixed_zero = vec![true, false, true, false, true];
        // 2 x1 + x3 = 3, x1 - x3 = 1
        let s = qp_solve(&p).unwrap();
        assert!((s.x[1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((s.x[3] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.x[0], 0.0);
    }

    #[test]
    fn bound_becomes_active() {
        // sum = 1 and x0 - x1 = 2 -> least norm (1.5, -0.5) violates x1 >= 0
        let p = nonneg(2, vec![(vec![1.0, 1.0], 1.0), (vec![1.0, -1.0], 2.0)]);
        assert!(matches!(qp_solve(&p), Err(KernelError::Infeasible(_))));
        let p = nonneg(3, vec![(vec![1.0, 1.0, 1.0], 1.0), (vec![1.0, -1.0, 0.0], 1.0)]);
        let s = qp_solve(&p).unwrap();
        assert!(s.x.iter().all(|&v| v >= 0.0));
        assert!((s.x[0] - 1.0).abs() < 1e-12 && s.x[1].abs() < 1e-12 && s.x[2].abs() < 1e-12);
        assert!(s.stationarity_residual(&p) < 1e-12);
    }

    #[test]
    fn rejects_dependent_rows() {
        let p = nonneg(3, vec![(vec![1.0, 1.0, 1.0], 1.0), (vec![2.0, 2.0, 2.0], 2.0)]);
        assert!(matches!(qp_solve(&p), Err(KernelError::RankDeficient)));
    }

    /// Accelerated gradient ascent on the dual `b^T l - 1/2 |(E^T l)_+|^2`,
    /// whose maximizer gives `x = (E^T l)_+` (clamping only bounded entries).
    fn dual_projected_gradient(p: &QpProblem) -> Vec<f64> {
        let m = p.equality_rows.len();
        let primal = |l: &[f64]| -> Vec<f64> {
            (0..p.n)
                .map(|i| {
                    let v: f64 = (0..m).map(|r| p.equality_rows[r].0[i] * l[r]).sum();
                    if p.lower_bounds[i] == 0.0 { v.max(0.0) } else { v }
                })
                .collect()
        };
        let lip: f64 = p.equality_rows.iter().map(|(r, _)| r.iter().map(|v| v * v).sum::<f64>()).sum();
        let step = 1.0 / lip;
        let mut l = vec![0.0; m];
        let mut prev = l.clone();
        for k in 0..200_000 {
            let beta = k as f64 / (k as f64 + 3.0);
            let y: Vec<f64> = (0..m).map(|r| l[r] + beta * (l[r] - prev[r])).collect();
            let x = primal(&y);
            prev = l.clone();
            for r in 0..m {
                let ex: f64 = p.equality_rows[r].0.iter().zip(&x).map(|(a, b)| a * b).sum();
                l[r] = y[r] + step * (p.equality_rows[r].1 - ex);
            }
        }
        primal(&l)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn matches_projected_gradient(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 10;
            let m = rng.gen_range(1..=3);
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let rows: Vec<(Vec<f64>, f64)> = (0..m)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let rhs = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
                    (row, rhs)
                })
                .collect();
            let mut p = nonneg(n, rows);
            if seed % 3 == 0 {
                p.lower_bounds[0] = f64::NEG_INFINITY;
            }
            let s = qp_solve(&p).unwrap();
            prop_assert!(s.stationarity_residual(&p) < 1e-8);
            prop_assert!(s.complementarity() < 1e-10);
            prop_assert!(s.equality_residual(&p) < 1e-10);
            let reference = dual_projected_gradient(&p);
            let obj_ref: f64 = reference.iter().map(|v| v * v).sum();
            prop_assert!((s.objective() - obj_ref).abs() <= 1e-6 * obj_ref.max(1.0), "{} vs {}", s.objective(), obj_ref);
        }
    }
}
