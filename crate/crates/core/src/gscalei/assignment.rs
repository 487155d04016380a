//! Row permutations chosen by optimal assignment.
//!
//! Convention throughout: a permutation `rho` reorders rows so that new row `i`
//! is old row `rho[i]`, i.e. `(P_rho A)[i][j] = A[rho[i]][j]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scores::ScoreChangeMatrices;

/// Dense O(n^3) Hungarian algorithm (shortest augmenting paths with potentials).
/// `cost` is square; returns `assign` with `assign[r]` the column given to row `r`,
/// minimizing the total cost.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Best total `sum_k weight[rows[assign_k]][cols[k]]` over bijections between `cols`
/// and `rows` (equal lengths).
fn best_value(weight: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = cols
        .iter()
        .map(|&c| rows.iter().map(|&r| -weight[(r, c)]).collect())
        .collect();
    hungarian_min(&cost)
        .iter()
        .enumerate()
        .map(|(k, &r)| weight[(rows[r], cols[k])])
        .sum()
}

/// Permutation `rho` maximizing `sum_i weight[rho[i]][i]`; among maximizers the
/// lexicographically smallest is returned.
pub fn max_weight_assignment(weight: &DMatrix<f64>) -> Vec<usize> {
    let n = weight.nrows();
    assert_eq!(n, weight.ncols(), "assignment needs a square matrix");
    let all: Vec<usize> = (0..n).collect();
    let optimum = best_value(weight, &all, &all);
    let scale = weight.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let tol = 1e-12 * (1.0 + scale) * n as f64;
    let mut rho = Vec::with_capacity(n);
    let mut free: Vec<usize> = all.clone();
    let mut fixed = 0.0;
    for i in 0..n {
        let rest_cols: Vec<usize> = (i + 1..n).collect();
        let pick = free
            .iter()
            .position(|&r| {
                let rest_rows: Vec<usize> = free.iter().copied().filter(|&x| x != r).collect();
                fixed + weight[(r, i)] + best_value(weight, &rest_rows, &rest_cols) >= optimum - tol
            })
            .expect("the optimum is attainable from every optimal prefix");
        let r = free.remove(pick);
        fixed += weight[(r, i)];
        rho.push(r);
    }
    rho
}

/// Row permutation making `D_t` as close to diagonal as possible: maximizes the
/// permuted diagonal mass.
pub fn align_permutation(mats: &ScoreChangeMatrices) -> Vec<usize> {
    max_weight_assignment(&mats.d_t)
}

/// A permutation `pi` with `A[pi[i]][i] != 0` for every `i`.
pub fn permutation_for_nonzero_diagonal(a: &DMatrix<f64>) -> Result<Vec<usize>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape("matrix must be square".into()));
    }
    let indicator = a.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    let pi = max_weight_assignment(&indicator);
    if pi.iter().enumerate().all(|(i, &r)| a[(r, i)] != 0.0) {
        Ok(pi)
    } else {
        Err(Error::NoPerfectMatching)
    }
}
