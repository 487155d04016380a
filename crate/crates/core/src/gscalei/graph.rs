//! Latent-graph read-out and the coupling feasibility test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::scm::Dag;
use crate::scores::{max_normalized, ScoreChangeMatrices};

use super::{GraphMode, GraphNormalization, GscaleConfig};

/// Reads a DAG off the observational score-change matrix `D`.
///
/// Nodes are first relabelled, `D'[i][j] = D[perm[i]][perm[j]]`, then `D'` is
/// normalized per `cfg.graph_normalization`; `j` becomes a parent of `i` when
/// `D'[j][i] >= lambda_g` (and `j < i` in triangular mode).
pub fn recover_graph(mats: &ScoreChangeMatrices, perm: &[usize], cfg: &GscaleConfig) -> Dag {
    let n = mats.d.nrows();
    let relabelled = DMatrix::from_fn(n, n, |i, j| mats.d[(perm[i], perm[j])]);
    let d = normalize_for_graph(&relabelled, cfg.graph_normalization);
    let above = |j: usize, i: usize| d[(j, i)] >= cfg.lambda_g;
    match cfg.graph_mode {
        GraphMode::Triangular => {
            let parents = (0..n).map(|i| (0..i).filter(|&j| above(j, i)).collect()).collect();
            Dag::from_parents(parents).expect("forward edges are acyclic")
        }
        GraphMode::Full => {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if j == i || !above(j, i) {
                        continue;
                    }
                    // 2-cycle: keep the larger entry, the forward edge on ties.
                    if above(i, j) && (d[(i, j)] > d[(j, i)] || (d[(i, j)] == d[(j, i)] && i < j)) {
                        continue;
                    }
                    edges.push((j, i));
                }
            }
            break_cycles(n, edges, &d)
        }
    }
}

/// Scaled copy of `d` on which `lambda_g` is applied. Under diagonal
/// normalization a row with a vanishing diagonal entry maps to zeros.
pub fn normalize_for_graph(d: &DMatrix<f64>, how: GraphNormalization) -> DMatrix<f64> {
    match how {
        GraphNormalization::Max => max_normalized(d),
        GraphNormalization::Diagonal => DMatrix::from_fn(d.nrows(), d.ncols(), |j, i| {
            let s = d[(j, j)];
            if s > 0.0 {
                d[(j, i)] / s
            } else {
                0.0
            }
        }),
    }
}

/// Drops the weakest edge of some remaining cycle until the graph is acyclic.
fn break_cycles(n: usize, mut edges: Vec<(usize, usize)>, weight: &DMatrix<f64>) -> Dag {
    loop {
        match find_cycle(n, &edges) {
            None => return Dag::from_edges(n, &edges).expect("acyclic by construction"),
            Some(cycle) => {
                let weakest = cycle
                    .iter()
                    .copied()
                    .min_by(|a, b| weight[*a].total_cmp(&weight[*b]))
                    .expect("cycles are non-empty");
                edges.retain(|&e| e != weakest);
            }
        }
    }
}

/// Edges of one directed cycle, if any.
fn find_cycle(n: usize, edges: &[(usize, usize)]) -> Option<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    // 0 = unvisited, 1 = on stack, 2 = done.
    let mut state = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(v: usize, adj: &[Vec<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<(usize, usize)>> {
        state[v] = 1;
        stack.push(v);
        for &w in &adj[v] {
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).expect("w is on the stack");
                let mut cyc: Vec<(usize, usize)> = stack[start..].windows(2).map(|p| (p[0], p[1])).collect();
                cyc.push((v, w));
                return Some(cyc);
            }
            if state[w] == 0 {
                if let Some(c) = dfs(w, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    (0..n).find_map(|v| if state[v] == 0 { dfs(v, &adj, &mut state, &mut stack) } else { None })
}

/// One violated constraint of the coupling test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `D_t` has mass off the diagonal.
    DtOffDiagonal { row: usize, col: usize, value: f64 },
    /// `D_t` has a (near) zero diagonal entry.
    DtMissingDiagonal { index: usize, value: f64 },
    /// Supports of `D` and `D̃` disagree.
    SupportMismatch { row: usize, col: usize, d: f64, d_tilde: f64 },
    /// `D` has a (near) zero diagonal entry.
    DMissingDiagonal { index: usize, value: f64 },
    /// Both `D[i][j]` and `D[j][i]` are in the support.
    TwoCycle { i: usize, j: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Sum over violations of the offending max-normalized magnitude; missing
    /// diagonals contribute their shortfall below the cutoff.
    pub violation_mass: f64,
}

/// Thresholded check of the coupling constraints on matrices taken at an aligned
/// encoder: `D_t` diagonal with a full diagonal, `1{D} = 1{D̃}` and
/// `1{D} ⊙ 1{D^T} = I`. Each matrix is max-normalized and compared to
/// `cfg.eps_feasibility`.
pub fn feasibility_check(mats: &ScoreChangeMatrices, cfg: &GscaleConfig) -> FeasibilityReport {
    let eps = cfg.eps_feasibility;
    let n = mats.d_t.nrows();
    let dt = max_normalized(&mats.d_t);
    let d = max_normalized(&mats.d);
    let dd = max_normalized(&mats.d_tilde);
    let mut violations = Vec::new();
    let mut mass = 0.0;
    for i in 0..n {
        for m in 0..n {
            let v = dt[(i, m)];
            if i == m && !(v > eps) {
                violations.push(Violation::DtMissingDiagonal { index: i, value: v });
                mass += eps - v;
            } else if i != m && v > eps {
                violations.push(Violation::DtOffDiagonal { row: i, col: m, value: v });
                mass += v;
            }
        }
    }
    for i in 0..n {
        for m in 0..n {
            if (d[(i, m)] > eps) != (dd[(i, m)] > eps) {
                violations.push(Violation::SupportMismatch {
                    row: i,
                    col: m,
                    d: d[(i, m)],
                    d_tilde: dd[(i, m)],
                });
                mass += d[(i, m)].max(dd[(i, m)]);
            }
        }
    }
    for i in 0..n {
        if !(d[(i, i)] > eps) {
            violations.push(Violation::DMissingDiagonal { index: i, value: d[(i, i)] });
            mass += eps - d[(i, i)];
        }
        for j in i + 1..n {
            if d[(i, j)] > eps && d[(j, i)] > eps {
                let value = d[(i, j)].min(d[(j, i)]);
                violations.push(Violation::TwoCycle { i, j, value });
                mass += value;
            }
        }
    }
    FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
        violation_mass: mass,
    }
}
