//! Observed-space score differences, their transport to a candidate encoder's
//! latent space, and the score-change matrices built from them.
//!
//! Every difference family is evaluated at the same observational samples. The
//! fitting code only ever sees [`ScoreDiffBatch`] and never the generating latents.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scm::{Environment, QuadraticScm};
use crate::transform::{arctanh_rows, DecoderGlm, EncoderLinear};

/// Which pair of environments a score difference compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvPair {
    /// `s_X - s_X^m`
    ObsEnv1(usize),
    /// `s_X - s̃_X^m`
    ObsEnv2(usize),
    /// `s_X^m - s̃_X^m`
    Env1Env2(usize),
}

impl EnvPair {
    fn stream_tag(self) -> u64 {
        let (m, f) = match self {
            EnvPair::ObsEnv1(m) => (m, 0),
            EnvPair::ObsEnv2(m) => (m, 1),
            EnvPair::Env1Env2(m) => (m, 2),
        };
        3 * m as u64 + f
    }
}

/// Anything that can produce observed-space score differences at given samples.
///
/// Returns an `n_s x d` matrix whose row `k` is the difference at `x_samples` row `k`.
pub trait ScoreDiffEstimator: Sync {
    fn score_diffs(&self, x_samples: &DMatrix<f64>, pair: EnvPair) -> Result<DMatrix<f64>>;
}

/// Per-sample score differences for all three environment pairings and every `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDiffBatch {
    /// Observational samples, `n_s x d`.
    pub x_samples: DMatrix<f64>,
    z_samples: Option<DMatrix<f64>>,
    /// `d_obs1[m]` holds `(s_X - s_X^m)(x_k)` row-wise, `n_s x d`.
    pub d_obs1: Vec<DMatrix<f64>>,
    /// `d_obs2[m]` holds `(s_X - s̃_X^m)(x_k)`.
    pub d_obs2: Vec<DMatrix<f64>>,
    /// `d_pair[m]` holds `(s_X^m - s̃_X^m)(x_k)`.
    pub d_pair: Vec<DMatrix<f64>>,
    pub seed: Option<u64>,
}

impl ScoreDiffBatch {
    pub fn new(
        x_samples: DMatrix<f64>,
        d_obs1: Vec<DMatrix<f64>>,
        d_obs2: Vec<DMatrix<f64>>,
        d_pair: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = d_obs1.len();
        if n == 0 || d_obs2.len() != n || d_pair.len() != n {
            return Err(Error::Shape("each difference family needs the same number n >= 1 of environments".into()));
        }
        let shape = x_samples.shape();
        if d_obs1.iter().chain(&d_obs2).chain(&d_pair).any(|m| m.shape() != shape) {
            return Err(Error::Shape(format!("every difference matrix must be {}x{}", shape.0, shape.1)));
        }
        if shape.1 < n {
            return Err(Error::Shape(format!("observation dimension {} below latent dimension {n}", shape.1)));
        }
        Ok(ScoreDiffBatch {
            x_samples,
            z_samples: None,
            d_obs1,
            d_obs2,
            d_pair,
            seed: None,
        })
    }

    pub fn n(&self) -> usize {
        self.d_obs1.len()
    }

    pub fn n_samples(&self) -> usize {
        self.x_samples.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.x_samples.ncols()
    }

    /// Generating latents, present only on batches built by the oracle in-process.
    pub fn oracle_latents(&self) -> Option<&DMatrix<f64>> {
        self.z_samples.as_ref()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Relabels the second environment set: slot `m` takes the environment
    /// originally at `pi[m]`. Pair differences follow by telescoping:
    /// `s^m - s̃^{pi m} = (s - s̃^{pi m}) - (s - s^m)`.
    pub fn relabel_second(&self, pi: &[usize]) -> ScoreDiffBatch {
        let d_obs2: Vec<_> = pi.iter().map(|&p| self.d_obs2[p].clone()).collect();
        let d_pair = d_obs2.iter().zip(&self.d_obs1).map(|(o2, o1)| o2 - o1).collect();
        ScoreDiffBatch {
            x_samples: self.x_samples.clone(),
            z_samples: self.z_samples.clone(),
            d_obs1: self.d_obs1.clone(),
            d_obs2,
            d_pair,
            seed: self.seed,
        }
    }

    pub fn family(&self, pair: EnvPair) -> &DMatrix<f64> {
        match pair {
            EnvPair::ObsEnv1(m) => &self.d_obs1[m],
            EnvPair::ObsEnv2(m) => &self.d_obs2[m],
            EnvPair::Env1Env2(m) => &self.d_pair[m],
        }
    }
}

/// Latent score differences `(s - s^m, s - s̃^m, s^m - s̃^m)` at `z`.
pub fn latent_score_diffs(scm: &QuadraticScm, m: usize, z: &[f64]) -> Result<[DVector<f64>; 3]> {
    let s = scm.latent_score(Environment::Obs, z)?;
    let s1 = scm.latent_score(Environment::Env1(m), z)?;
    let s2 = scm.latent_score(Environment::Env2(m), z)?;
    Ok([&s - &s1, &s - &s2, &s1 - &s2])
}

/// Exact score differences: latent differences from the closed-form scores pushed
/// through `[J_g(z)^†]^T` at each observational latent sample.
pub fn oracle_score_diffs(scm: &QuadraticScm, dec: &DecoderGlm, z_samples: &DMatrix<f64>) -> Result<ScoreDiffBatch> {
    let n = scm.n();
    if z_samples.ncols() != n || dec.latent_dim() != n {
        return Err(Error::Shape("latent samples, SCM and decoder disagree on n".into()));
    }
    let n_s = z_samples.nrows();
    let d = dec.obs_dim();
    // Per sample: 3n observed differences of length d.
    let per_sample: Vec<Vec<DVector<f64>>> = (0..n_s)
        .into_par_iter()
        .map(|k| {
            let z: Vec<f64> = z_samples.row(k).iter().copied().collect();
            let j = dec.jacobian(&z);
            let jp = crate::linalg::pinv_checked(&j, crate::transform::JACOBIAN_RANK_TOL, |sigma_min| {
                Error::RankDeficientJacobian { sigma_min }
            })?;
            let mut out = Vec::with_capacity(3 * n);
            for m in 0..n {
                for diff in latent_score_diffs(scm, m, &z)? {
                    out.push(jp.tr_mul(&diff));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut fams = vec![vec![DMatrix::zeros(n_s, d); n]; 3];
    for (k, diffs) in per_sample.iter().enumerate() {
        for m in 0..n {
            for (f, fam) in fams.iter_mut().enumerate() {
                fam[m].set_row(k, &diffs[3 * m + f].transpose());
            }
        }
    }
    let d_pair = fams.pop().expect("three families");
    let d_obs2 = fams.pop().expect("three families");
    let d_obs1 = fams.pop().expect("three families");
    let mut batch = ScoreDiffBatch::new(dec.decode_rows(z_samples), d_obs1, d_obs2, d_pair)?;
    batch.z_samples = Some(z_samples.clone());
    Ok(batch)
}

/// The exact oracle behind the estimator interface. It holds the generating
/// latents of the samples it will be queried at.
pub struct OracleEstimator<'a> {
    scm: &'a QuadraticScm,
    dec: &'a DecoderGlm,
    z_samples: &'a DMatrix<f64>,
}

impl<'a> OracleEstimator<'a> {
    pub fn new(scm: &'a QuadraticScm, dec: &'a DecoderGlm, z_samples: &'a DMatrix<f64>) -> Self {
        OracleEstimator { scm, dec, z_samples }
    }
}

impl ScoreDiffEstimator for OracleEstimator<'_> {
    fn score_diffs(&self, x_samples: &DMatrix<f64>, pair: EnvPair) -> Result<DMatrix<f64>> {
        if x_samples.nrows() != self.z_samples.nrows() {
            return Err(Error::Shape("oracle queried at samples it did not generate".into()));
        }
        let d = self.dec.obs_dim();
        let rows: Vec<DVector<f64>> = (0..x_samples.nrows())
            .into_par_iter()
            .map(|k| {
                let z: Vec<f64> = self.z_samples.row(k).iter().copied().collect();
                let (m, f) = match pair {
                    EnvPair::ObsEnv1(m) => (m, 0),
                    EnvPair::ObsEnv2(m) => (m, 1),
                    EnvPair::Env1Env2(m) => (m, 2),
                };
                let diffs = latent_score_diffs(self.scm, m, &z)?;
                self.dec.observed_score_diff(&z, diffs[f].as_slice())
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(rows.len(), d, |k, j| rows[k][j]))
    }
}

/// Wraps an estimator and adds i.i.d. `Normal(0, tau^2)` noise to every entry.
/// Noise for each environment pair comes from its own sub-stream.
pub struct NoisedEstimator<E> {
    inner: E,
    tau: f64,
    seed: SeedStream,
}

impl<E: ScoreDiffEstimator> NoisedEstimator<E> {
    pub fn new(inner: E, tau: f64, seed: SeedStream) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::Invalid(format!("noise scale {tau} must be non-negative")));
        }
        Ok(NoisedEstimator { inner, tau, seed })
    }
}

impl<E: ScoreDiffEstimator> ScoreDiffEstimator for NoisedEstimator<E> {
    fn score_diffs(&self, x_samples: &DMatrix<f64>, pair: EnvPair) -> Result<DMatrix<f64>> {
        let clean = self.inner.score_diffs(x_samples, pair)?;
        if self.tau == 0.0 {
            return Ok(clean);
        }
        let normal = Normal::new(0.0, self.tau).expect("non-negative std");
        let mut rng = self.seed.child(pair.stream_tag()).rng();
        let mut noisy = clean;
        // Row-major draw order so the stream layout does not depend on storage.
        for k in 0..noisy.nrows() {
            for j in 0..noisy.ncols() {
                noisy[(k, j)] += normal.sample(&mut rng);
            }
        }
        Ok(noisy)
    }
}

/// Builds a batch by querying `estimator` for all `3n` environment pairs.
pub fn build_batch<E: ScoreDiffEstimator + ?Sized>(estimator: &E, x_samples: DMatrix<f64>, n: usize) -> Result<ScoreDiffBatch> {
    let mut fams: [Vec<DMatrix<f64>>; 3] = Default::default();
    for m in 0..n {
        fams[0].push(estimator.score_diffs(&x_samples, EnvPair::ObsEnv1(m))?);
        fams[1].push(estimator.score_diffs(&x_samples, EnvPair::ObsEnv2(m))?);
        fams[2].push(estimator.score_diffs(&x_samples, EnvPair::Env1Env2(m))?);
    }
    let [d_obs1, d_obs2, d_pair] = fams;
    ScoreDiffBatch::new(x_samples, d_obs1, d_obs2, d_pair)
}

/// Score differences of a candidate encoder's latents, one `n_s x n` matrix per `m`
/// and family.
#[derive(Debug, Clone)]
pub struct TransportedDiffs {
    pub obs1: Vec<DMatrix<f64>>,
    pub obs2: Vec<DMatrix<f64>>,
    pub pair: Vec<DMatrix<f64>>,
}

/// Left-multiplies every observed difference at `x_k` by `J_{h^{-1}}(h(x_k))^T`.
pub fn transport_to_candidate(enc: &EncoderLinear, batch: &ScoreDiffBatch) -> Result<TransportedDiffs> {
    if enc.obs_dim() != batch.obs_dim() || enc.latent_dim() != batch.n() {
        return Err(Error::Shape("encoder shape does not match batch".into()));
    }
    let p = enc.pinv()?;
    let a = arctanh_rows(&batch.x_samples)?;
    let zhat = &a * enc.matrix().transpose();
    // w_k = 1 - tanh^2(H^† ẑ_k), stored row-wise.
    let w = (&zhat * p.transpose()).map(|u| {
        let t = u.tanh();
        1.0 - t * t
    });
    let push = |v: &DMatrix<f64>| w.component_mul(v) * &p;
    Ok(TransportedDiffs {
        obs1: batch.d_obs1.iter().map(push).collect(),
        obs2: batch.d_obs2.iter().map(push).collect(),
        pair: batch.d_pair.iter().map(push).collect(),
    })
}

/// `D_t(h)`, `D(h)` and `D̃(h)`: `[M]_{i,m}` is the sample mean of `|[diff_m]_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreChangeMatrices {
    pub d_t: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
}

fn mean_abs_columns(diffs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = diffs.len();
    let mut out = DMatrix::zeros(n, n);
    for (m, t) in diffs.iter().enumerate() {
        let n_s = t.nrows() as f64;
        for i in 0..n {
            out[(i, m)] = t.column(i).iter().map(|v| v.abs()).sum::<f64>() / n_s;
        }
    }
    out
}

pub fn score_change_matrices(enc: &EncoderLinear, batch: &ScoreDiffBatch) -> Result<ScoreChangeMatrices> {
    let t = transport_to_candidate(enc, batch)?;
    Ok(ScoreChangeMatrices {
        d_t: mean_abs_columns(&t.pair),
        d: mean_abs_columns(&t.obs1),
        d_tilde: mean_abs_columns(&t.obs2),
    })
}

/// `m / max(m)`; all zeros stay zeros.
pub fn max_normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let max = m.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        m / max
    } else {
        m.clone()
    }
}

/// Entries strictly above `eps` after max-normalization.
pub fn support(m: &DMatrix<f64>, eps: f64) -> DMatrix<bool> {
    max_normalized(m).map(|v| v > eps)
}

pub fn support_size(m: &DMatrix<f64>, eps: f64) -> usize {
    support(m, eps).iter().filter(|&&b| b).count()
}

impl ScoreChangeMatrices {
    /// Relabels rows `i -> perm[i]` of the latent-coordinate axis only.
    pub fn permute_rows(&self, perm: &[usize]) -> ScoreChangeMatrices {
        let f = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)]);
        ScoreChangeMatrices {
            d_t: f(&self.d_t),
            d: f(&self.d),
            d_tilde: f(&self.d_tilde),
        }
    }
}
