use rayon::prelude::*;

use crate::field::{ScalarField, VectorField};
use crate::swarm::InteractionWeight;

/// Mean-field drift `P(rho)(x) = sum_y A(x, y) (y - x) rho(y) dV`, summed over
/// the cells whose centers lie within the weight's radius of `x`.
pub fn interaction_field(rho: &ScalarField, weight: &InteractionWeight) -> VectorField {
    let grid = rho.grid();
    let rank = grid.rank();
    let dv = grid.cell_volume();
    let reach: Vec<i64> = (0..rank)
        .map(|a| (weight.radius / grid.spacing(a)).floor() as i64)
        .collect();
    let mut offsets: Vec<([i64; 3], [f64; 3], f64)> = Vec::new();
    let mut idx = [0i64; 3];
    let total: i64 = reach.iter().map(|r| 2 * r + 1).product();
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..rank).rev() {
            let w = 2 * reach[a] + 1;
            idx[a] = rem % w - reach[a];
            rem /= w;
        }
        let mut d = [0.0; 3];
        for a in 0..rank {
            d[a] = idx[a] as f64 * grid.spacing(a);
        }
        let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w = weight.weight(dist);
        if w != 0.0 && dist > 0.0 {
            offsets.push((idx, d, w));
        }
    }

    let dims = grid.dims();
    let values = rho.values();
    let per_cell: Vec<[f64; 3]> = (0..grid.len())
        .into_par_iter()
        .map(|cell| {
            let here = grid.multi_index(cell);
            let mut acc = [0.0; 3];
            'offsets: for (off, d, w) in &offsets {
                let mut flat = 0usize;
                for a in 0..rank {
                    let j = here[a] as i64 + off[a];
                    if j < 0 || j >= dims[a] as i64 {
                        continue 'offsets;
                    }
                    flat = flat * dims[a] + j as usize;
                }
                let m = w * values[flat] * dv;
                for a in 0..rank {
                    acc[a] += m * d[a];
                }
            }
            acc
        })
        .collect();
    let components = (0..rank)
        .map(|a| per_cell.iter().map(|v| v[a]).collect())
        .collect();
    VectorField::new(grid.clone(), components).expect("component lengths match grid")
}
