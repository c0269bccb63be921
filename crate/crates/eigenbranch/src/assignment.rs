//! Minimum-cost perfect assignment on a square cost matrix.
//!
//! Hungarian algorithm with row/column potentials and shortest augmenting
//! paths, O(n³). Greedy matching provably mislabels near triple crossings,
//! so branch matching always goes through this solver; at the branch
//! counts involved (k ≲ 32) the cost is negligible.

use nalgebra::DMatrix;

/// Returns `assign` with `assign[row] = col` minimizing the total cost.
/// Costs must be finite.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(
        cost.iter().all(|c| c.is_finite()),
        "cost matrix must be finite"
    );
    if n == 0 {
        return Vec::new();
    }

    // potentials over rows (u) and columns (v); p[j] = row matched to
    // column j, with index 0 acting as a virtual column
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut p = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0_usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}
