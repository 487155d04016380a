//! Latent causal model: random DAGs, quadratic additive-noise mechanisms, the
//! observational and hard-interventional environments, and exact log-densities
//! and score functions.
//!
//! Node mechanism (non-root `i`): `Z_i = sqrt(Z_pa^T A_i Z_pa) + N_i` with
//! `N_i ~ Normal(0, sigma_i^2)`. Roots are `Z_i = N_i`. A hard intervention on node
//! `l` severs its parents and draws `Z_l` from a zero-mean normal with the
//! environment's intervention variance.
//!
//! Nodes are 0-indexed everywhere in this crate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{invert_permutation, is_permutation};

/// Below this value a quadratic-form square root is treated as non-differentiable.
pub const SINGULAR_FORM_TOL: f64 = 1e-12;

/// Directed acyclic graph stored as parent sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
}

impl Dag {
    pub fn empty(n: usize) -> Self {
        Dag {
            parents: vec![Vec::new(); n],
            topo_order: (0..n).collect(),
        }
    }

    /// Builds a DAG from parent sets, rejecting self loops and cycles.
    /// Parent lists are sorted and deduplicated.
    pub fn from_parents(mut parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        for (i, pa) in parents.iter_mut().enumerate() {
            pa.sort_unstable();
            pa.dedup();
            if let Some(&p) = pa.iter().find(|&&p| p >= n || p == i) {
                return Err(Error::Invalid(format!("node {i} has invalid parent {p}")));
            }
        }
        let topo_order = topological_order(&parents)
            .ok_or_else(|| Error::Invalid("parent sets contain a directed cycle".into()))?;
        Ok(Dag { parents, topo_order })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut parents = vec![Vec::new(); n];
        for &(from, to) in edges {
            if to >= n {
                return Err(Error::Invalid(format!("edge target {to} out of range")));
            }
            parents[to].push(from);
        }
        Dag::from_parents(parents)
    }

    pub fn n(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.parents[j].contains(&i)).collect()
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].contains(&from)
    }

    /// Edges as `(from, to)` pairs, sorted by target then source.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(to, pa)| pa.iter().map(move |&from| (from, to)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// `Pa(i) ∪ {i}`, sorted.
    pub fn closed_parents(&self, i: usize) -> Vec<usize> {
        let mut s = self.parents[i].clone();
        s.push(i);
        s.sort_unstable();
        s
    }

    /// Relabels nodes so that node `i` of `self` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Dag> {
        if perm.len() != self.n() || !is_permutation(perm) {
            return Err(Error::Invalid("relabelling must be a permutation of the nodes".into()));
        }
        let edges: Vec<_> = self.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Dag::from_edges(self.n(), &edges)
    }
}

/// Kahn's algorithm, smallest available index first.
fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    while order.len() < n {
        let next = (0..n).find(|&i| !done[i] && indeg[i] == 0)?;
        done[next] = true;
        order.push(next);
        for (j, pa) in parents.iter().enumerate() {
            if pa.contains(&next) {
                indeg[j] -= 1;
            }
        }
    }
    Some(order)
}

/// Erdős–Rényi DAG: every pair `i < j` gets the edge `i -> j` independently with
/// probability `density`. The identity is a topological order.
pub fn sample_er_dag<R: Rng + ?Sized>(n: usize, density: f64, rng: &mut R) -> Result<Dag> {
    if n == 0 {
        return Err(Error::Invalid("a DAG needs at least one node".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Invalid(format!("density {density} outside [0, 1]")));
    }
    let mut parents = vec![Vec::new(); n];
    for (j, pa) in parents.iter_mut().enumerate() {
        for i in 0..j {
            if rng.random_bool(density) {
                pa.push(i);
            }
        }
    }
    Ok(Dag {
        parents,
        topo_order: (0..n).collect(),
    })
}

/// One of the `2n + 1` environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Environment {
    Obs,
    /// `m`-th environment of the first interventional set.
    Env1(usize),
    /// `m`-th environment of the second interventional set.
    Env2(usize),
}

/// Intervention targets of both environment sets: `env1[m]` is the node intervened
/// in the `m`-th environment of the first set, `env2[m]` likewise for the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Targets {
    pub env1: Vec<usize>,
    pub env2: Vec<usize>,
}

impl Targets {
    pub fn coupled(env1: Vec<usize>) -> Result<Self> {
        let t = Targets {
            env2: env1.clone(),
            env1,
        };
        t.validate()?;
        Ok(t)
    }

    /// Second set targets `sigma ∘ env1`.
    pub fn uncoupled(env1: Vec<usize>, sigma: &[usize]) -> Result<Self> {
        if sigma.len() != env1.len() || !is_permutation(sigma) {
            return Err(Error::Invalid("mismatch must be a permutation".into()));
        }
        let env2 = env1.iter().map(|&l| sigma[l]).collect();
        let t = Targets { env1, env2 };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.env1.len() != self.env2.len() || !is_permutation(&self.env1) || !is_permutation(&self.env2) {
            return Err(Error::Invalid("intervention targets must be permutations of the nodes".into()));
        }
        Ok(())
    }

    pub fn is_coupled(&self) -> bool {
        self.env1 == self.env2
    }

    /// The relabelling `pi` with `env2[pi[m]] == env1[m]`: relabelling the second
    /// set by it restores the coupling.
    pub fn true_coupling(&self) -> Vec<usize> {
        let inv2 = invert_permutation(&self.env2);
        self.env1.iter().map(|&l| inv2[l]).collect()
    }
}

/// Quadratic additive-noise SCM with two hard-intervention variances per node.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticScm {
    pub dag: Dag,
    /// `quad[i]` is `A_i` (ordered like `dag.parents(i)`); `None` for roots.
    pub quad: Vec<Option<DMatrix<f64>>>,
    pub noise_var: Vec<f64>,
    pub int_var_1: Vec<f64>,
    pub int_var_2: Vec<f64>,
    pub targets: Targets,
}

/// Draws `A_i = B_i^T B_i` with `B_i` entries Unif[0, 1] for every non-root node,
/// noise variances Unif[0.5, 1.5] and intervention variances `sigma^2 + 1`,
/// `sigma^2 + 2`. Targets default to the coupled identity assignment.
pub fn sample_mechanisms<R: Rng + ?Sized>(dag: &Dag, rng: &mut R) -> QuadraticScm {
    let n = dag.n();
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let var = Uniform::new_inclusive(0.5, 1.5).expect("valid range");
    let quad = (0..n)
        .map(|i| {
            let k = dag.parents(i).len();
            if k == 0 {
                return None;
            }
            loop {
                let b = DMatrix::from_fn(k, k, |_, _| unit.sample(rng));
                let a = b.tr_mul(&b);
                let a = (&a + a.transpose()) * 0.5;
                let lambda_min = a.clone().symmetric_eigenvalues().min();
                if lambda_min > 1e-10 {
                    return Some(a);
                }
            }
        })
        .collect();
    let noise_var: Vec<f64> = (0..n).map(|_| var.sample(rng)).collect();
    let int_var_1 = noise_var.iter().map(|v| v + 1.0).collect();
    let int_var_2 = noise_var.iter().map(|v| v + 2.0).collect();
    QuadraticScm {
        dag: dag.clone(),
        quad,
        noise_var,
        int_var_1,
        int_var_2,
        targets: Targets {
            env1: (0..n).collect(),
            env2: (0..n).collect(),
        },
    }
}

impl QuadraticScm {
    pub fn n(&self) -> usize {
        self.dag.n()
    }

    pub fn with_targets(mut self, targets: Targets) -> Result<Self> {
        if targets.env1.len() != self.n() {
            return Err(Error::Shape("targets do not match node count".into()));
        }
        targets.validate()?;
        self.targets = targets;
        Ok(self)
    }

    /// Intervened node and its variance under `env`.
    pub fn intervened(&self, env: Environment) -> Option<(usize, f64)> {
        match env {
            Environment::Obs => None,
            Environment::Env1(m) => {
                let l = self.targets.env1[m];
                Some((l, self.int_var_1[l]))
            }
            Environment::Env2(m) => {
                let l = self.targets.env2[m];
                Some((l, self.int_var_2[l]))
            }
        }
    }

    /// `f_i(z_pa)`; zero for roots.
    pub fn mechanism(&self, i: usize, z: &[f64]) -> f64 {
        match &self.quad[i] {
            None => 0.0,
            Some(a) => quad_form(a, self.dag.parents(i), z).sqrt(),
        }
    }

    /// Residual and noise variance of every node under `env`.
    fn residuals(&self, env: Environment, z: &[f64]) -> (Vec<f64>, Vec<f64>, Option<usize>) {
        let target = self.intervened(env);
        let mut res = Vec::with_capacity(self.n());
        let mut var = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            match target {
                Some((l, v)) if l == i => {
                    res.push(z[i]);
                    var.push(v);
                }
                _ => {
                    res.push(z[i] - self.mechanism(i, z));
                    var.push(self.noise_var[i]);
                }
            }
        }
        (res, var, target.map(|t| t.0))
    }

    /// `log p_env(z)`.
    pub fn log_density(&self, env: Environment, z: &[f64]) -> f64 {
        let (res, var, _) = self.residuals(env, z);
        res.iter()
            .zip(&var)
            .map(|(r, v)| -0.5 * (2.0 * std::f64::consts::PI * v).ln() - r * r / (2.0 * v))
            .sum()
    }

    /// Closed-form `∇_z log p_env(z)`.
    pub fn latent_score(&self, env: Environment, z: &[f64]) -> Result<DVector<f64>> {
        let n = self.n();
        let (res, var, target) = self.residuals(env, z);
        let r: Vec<f64> = res.iter().zip(&var).map(|(e, v)| -e / v).collect();
        let mut s = DVector::from_vec(r.clone());
        for j in 0..n {
            if Some(j) == target {
                continue;
            }
            let Some(a) = &self.quad[j] else { continue };
            let pa = self.dag.parents(j);
            let f = quad_form(a, pa, z).sqrt();
            if !(f > SINGULAR_FORM_TOL) {
                return Err(Error::SingularQuadraticForm { node: j, value: f });
            }
            for (row, &p) in pa.iter().enumerate() {
                let az: f64 = pa.iter().enumerate().map(|(col, &q)| a[(row, col)] * z[q]).sum();
                s[p] -= az / f * r[j];
            }
        }
        Ok(s)
    }

    /// Ancestral sampling of `n_samples` rows from `env`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, env: Environment, n_samples: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.n();
        let target = self.intervened(env);
        let mut out = DMatrix::zeros(n_samples, n);
        let mut z = vec![0.0; n];
        for k in 0..n_samples {
            for &i in self.dag.topo_order() {
                let eps: f64 = StandardNormal.sample(rng);
                z[i] = match target {
                    Some((l, v)) if l == i => v.sqrt() * eps,
                    _ => self.mechanism(i, &z) + self.noise_var[i].sqrt() * eps,
                };
            }
            for i in 0..n {
                out[(k, i)] = z[i];
            }
        }
        out
    }

    pub fn to_file(&self) -> ScmFile {
        ScmFile {
            schema_version: SCM_SCHEMA_VERSION,
            n: self.n(),
            edges: self.dag.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            quad: self
                .quad
                .iter()
                .enumerate()
                .filter_map(|(i, a)| {
                    a.as_ref().map(|a| QuadEntry {
                        node: i,
                        parents: self.dag.parents(i).to_vec(),
                        a: a.transpose().as_slice().to_vec(),
                    })
                })
                .collect(),
            noise_var: self.noise_var.clone(),
            int_var_1: self.int_var_1.clone(),
            int_var_2: self.int_var_2.clone(),
            targets_env1: self.targets.env1.clone(),
            targets_env2: self.targets.env2.clone(),
        }
    }

    pub fn from_file(f: &ScmFile) -> Result<Self> {
        if f.schema_version != SCM_SCHEMA_VERSION {
            return Err(Error::Invalid(format!("unsupported SCM schema version {}", f.schema_version)));
        }
        let edges: Vec<_> = f.edges.iter().map(|e| (e[0], e[1])).collect();
        let dag = Dag::from_edges(f.n, &edges)?;
        let mut quad = vec![None; f.n];
        for q in &f.quad {
            if q.node >= f.n || dag.parents(q.node) != q.parents.as_slice() {
                return Err(Error::Invalid(format!("quadratic form for node {} does not match the DAG", q.node)));
            }
            let k = q.parents.len();
            if q.a.len() != k * k {
                return Err(Error::Shape(format!("A_{} has {} entries, expected {}", q.node, q.a.len(), k * k)));
            }
            quad[q.node] = Some(DMatrix::from_row_slice(k, k, &q.a));
        }
        if (0..f.n).any(|i| dag.parents(i).is_empty() != quad[i].is_none()) {
            return Err(Error::Invalid("every non-root node needs a quadratic form".into()));
        }
        for v in [&f.noise_var, &f.int_var_1, &f.int_var_2] {
            if v.len() != f.n || v.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Invalid("variances must be positive, one per node".into()));
            }
        }
        let scm = QuadraticScm {
            dag,
            quad,
            noise_var: f.noise_var.clone(),
            int_var_1: f.int_var_1.clone(),
            int_var_2: f.int_var_2.clone(),
            targets: Targets {
                env1: (0..f.n).collect(),
                env2: (0..f.n).collect(),
            },
        };
        scm.with_targets(Targets {
            env1: f.targets_env1.clone(),
            env2: f.targets_env2.clone(),
        })
    }
}

fn quad_form(a: &DMatrix<f64>, pa: &[usize], z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (r, &p) in pa.iter().enumerate() {
        for (c, &q) in pa.iter().enumerate() {
            acc += z[p] * a[(r, c)] * z[q];
        }
    }
    acc.max(0.0)
}

pub const SCM_SCHEMA_VERSION: u32 = 1;

/// JSON schema of a serialized SCM. `a` holds `A_i` row-major, indexed like `parents`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmFile {
    pub schema_version: u32,
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub quad: Vec<QuadEntry>,
    pub noise_var: Vec<f64>,
    pub int_var_1: Vec<f64>,
    pub int_var_2: Vec<f64>,
    pub targets_env1: Vec<usize>,
    pub targets_env2: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadEntry {
    pub node: usize,
    pub parents: Vec<usize>,
    pub a: Vec<f64>,
}
