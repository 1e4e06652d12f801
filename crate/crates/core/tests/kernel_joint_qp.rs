//! The separable product kernel against the full 2D quadratic program with
//! per-row and per-column moment constraints, solved as one dense QP.

use swomt::field::GridSpec;
use swomt::kernelopt::{optimize_kernel_1d, optimize_kernel_nd, qp_solve, Exclusion, QpProblem};

/// Keeps the rows that are linearly independent on the free variables
/// (modified Gram-Schmidt).
fn independent_rows(rows: Vec<(Vec<f64>, f64)>, free: &[bool]) -> Vec<(Vec<f64>, f64)> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (row, rhs) in rows {
        let mut v: Vec<f64> = row.iter().zip(free).map(|(a, &f)| if f { *a } else { 0.0 }).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * norm0 {
            basis.push(v.iter().map(|x| x / norm).collect());
            kept.push((row, rhs));
        }
    }
    kept
}

#[test]
fn joint_qp_matches_separable_product() {
    let a = 5f64.powf(-0.5);
    let n = 21;
    let grid = GridSpec::symmetric_nodes(2.0, n).unwrap();
    let d = grid.spacing(0);
    let xs: Vec<f64> = (0..n).map(|i| grid.center_coord(0, i)).collect();
    let x_exclusion = [(0.25, 0.75)];

    let product = optimize_kernel_nd(
        &[grid.clone(), grid.clone()],
        a,
        &Exclusion {
            boxes: vec![vec![x_exclusion[0], (f64::NEG_INFINITY, f64::INFINITY)]],
        },
    )
    .unwrap();
    let fx = optimize_kernel_1d(&grid, a, &x_exclusion).unwrap();
    let fy = optimize_kernel_1d(&grid, a, &[]).unwrap();

    // Compact admissible set: product of the per-axis supports, which also
    // removes the box exclusion.
    let idx = |i: usize, j: usize| i * n + j;
    let mut fixed = vec![true; n * n];
    for i in 0..n {
        for j in 0..n {
            fixed[idx(i, j)] = !(fx.values()[i] > 0.0 && fy.values()[j] > 0.0);
        }
    }
    let free: Vec<bool> = fixed.iter().map(|f| !f).collect();

    let mut rows = vec![(vec![d * d; n * n], 1.0)];
    for j in 0..n {
        let mut mean = vec![0.0; n * n];
        let mut second = vec![0.0; n * n];
        for i in 0..n {
            mean[idx(i, j)] = xs[i] * d;
            second[idx(i, j)] = (xs[i] * xs[i] - a * a) * d;
        }
        rows.push((mean, 0.0));
        rows.push((second, 0.0));
    }
    for i in 0..n {
        let mut mean = vec![0.0; n * n];
        let mut second = vec![0.0; n * n];
        for j in 0..n {
            mean[idx(i, j)] = xs[j] * d;
            second[idx(i, j)] = (xs[j] * xs[j] - a * a) * d;
        }
        rows.push((mean, 0.0));
        rows.push((second, 0.0));
    }
    let problem = QpProblem {
        n: n * n,
        equality_rows: independent_rows(rows, &free),
        lower_bounds: vec![0.0; n * n],
        fixed_zero: fixed,
    };
    let joint = qp_solve(&problem).unwrap();
    assert!(joint.stationarity_residual(&problem) < 1e-8);

    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            err = err.max((joint.x[idx(i, j)] - product.evaluate(&[xs[i], xs[j]])).abs());
        }
    }
    assert!(err <= 1e-6, "max deviation {err}");
}
