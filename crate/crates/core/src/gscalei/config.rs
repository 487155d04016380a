use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How `recover_graph` reads parents off the observational score-change matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Parents only among earlier coordinates (`j < i`).
    Triangular,
    /// Any `j != i`; 2-cycles keep the larger entry, longer cycles drop their weakest edge.
    Full,
}

/// How the observational score-change matrix is scaled before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormalization {
    /// Row `j` divided by `D[j][j]`. Rescaling an estimated coordinate rescales
    /// its row of `D` and its diagonal entry alike, so the result does not depend
    /// on the per-coordinate scale of the encoder.
    Diagonal,
    /// The whole matrix divided by its largest entry.
    Max,
}

/// Which encoder matrices the optimizer moves through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `H = K U^T` with `U` an orthonormal basis of the span of the `arctanh(x)`
    /// samples, so `h^{-1}(h(x)) = x` holds on the data for every full-rank `K`.
    /// Coincides with `Full` when `d = n`.
    DataSubspace,
    /// Every `n x d` matrix.
    Full,
}

/// Hyperparameters of the encoder fit and the downstream read-outs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GscaleConfig {
    /// Weight of the reconstruction term.
    pub lambda1: f64,
    /// Weight of the latent-norm term.
    pub lambda2: f64,
    pub lr: f64,
    pub steps: usize,
    /// Graph threshold on the normalized observational score-change matrix.
    pub lambda_g: f64,
    /// Support cutoff on max-normalized score-change matrices.
    pub eps_support: f64,
    /// Support cutoff used by the coupling-feasibility check on fitted encoders.
    pub eps_feasibility: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Audit the analytic gradient against finite differences before fitting.
    pub grad_check: bool,
    pub graph_mode: GraphMode,
    pub graph_normalization: GraphNormalization,
    pub parameterization: Parameterization,
    /// Largest `n` for which the coupling search over `n!` relabellings runs.
    pub max_search_n: usize,
    /// Seed of the random encoder initialization.
    pub seed: u64,
}

impl Default for GscaleConfig {
    fn default() -> Self {
        GscaleConfig {
            lambda1: 1e-4,
            lambda2: 1.0,
            lr: 1e-3,
            steps: 30_000,
            lambda_g: 0.1,
            eps_support: 1e-3,
            eps_feasibility: 1e-2,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            grad_check: false,
            graph_mode: GraphMode::Triangular,
            graph_normalization: GraphNormalization::Diagonal,
            parameterization: Parameterization::DataSubspace,
            max_search_n: 6,
            seed: 0,
        }
    }
}

impl GscaleConfig {
    /// Defaults with the step count and graph threshold used for `n` latent nodes:
    /// 3e4 steps and 0.1 up to five nodes, 4e4 steps and 0.2 beyond.
    pub fn for_nodes(n: usize) -> Self {
        let mut cfg = GscaleConfig::default();
        if n > 5 {
            cfg.steps = 40_000;
            cfg.lambda_g = 0.2;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_g", self.lambda_g),
            ("eps_support", self.eps_support),
            ("eps_feasibility", self.eps_feasibility),
            ("rmsprop_eps", self.rmsprop_eps),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Invalid(format!("{name} = {v} must be non-negative")));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Invalid(format!("lr = {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(Error::Invalid(format!("rmsprop_decay = {} must lie in [0, 1)", self.rmsprop_decay)));
        }
        Ok(())
    }
}
