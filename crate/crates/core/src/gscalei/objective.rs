//! The relaxed fitting objective
//!
//! ```text
//! L(H) = ||D_t(H)||_{1,1} + lambda1 * E||tanh(H^† H a) - x||^2 + lambda2 * E||H a||^2
//! ```
//!
//! with `a = arctanh(x)`, and its exact gradient with respect to `H`.
//!
//! The forward pass keeps samples in columns: `A` is `d x n_s`, `Ẑ = H A`,
//! `U = P Ẑ` with `P = H^T (H H^T)^{-1}`, and the transported pair differences of
//! environment `m` are `T_m = P^T (W ⊙ V_m)` where `W = 1 - tanh^2(U)`. The
//! backward pass runs the same chain in reverse; the pseudoinverse is
//! differentiated through `d(HH^T)^{-1} = -(HH^T)^{-1} d(HH^T) (HH^T)^{-1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scores::ScoreDiffBatch;
use crate::transform::{arctanh_rows, EncoderLinear, ENCODER_RANK_TOL};

use super::GscaleConfig;

/// The three objective terms before weighting, plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `||D_t(H)||_{1,1}`
    pub score_l1: f64,
    /// Mean squared reconstruction error.
    pub reconstruction: f64,
    /// Mean squared latent norm.
    pub latent_norm: f64,
    pub total: f64,
}

/// Precomputed view of a batch for repeated objective evaluations.
pub struct Objective {
    n: usize,
    n_s: usize,
    /// `d x n_s`
    a: DMatrix<f64>,
    /// `d x n_s`
    x: DMatrix<f64>,
    /// `d x (n * n_s)`; block `m` holds the pair differences of environment `m`.
    v: DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Objective {
    pub fn new(batch: &ScoreDiffBatch, cfg: &GscaleConfig) -> Result<Self> {
        let n = batch.n();
        let n_s = batch.n_samples();
        let d = batch.obs_dim();
        let a = arctanh_rows(&batch.x_samples)?.transpose();
        let x = batch.x_samples.transpose();
        let mut v = DMatrix::zeros(d, n * n_s);
        for (m, pair) in batch.d_pair.iter().enumerate() {
            v.columns_mut(m * n_s, n_s).copy_from(&pair.transpose());
        }
        Ok(Objective {
            n,
            n_s,
            a,
            x,
            v,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.n
    }

    pub fn obs_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Orthonormal `d x n` basis of the span of the `arctanh(x)` samples, leading
    /// singular directions first; the identity when `d = n`.
    pub fn data_basis(&self) -> Result<DMatrix<f64>> {
        let (n, d) = (self.n, self.obs_dim());
        if d == n {
            return Ok(DMatrix::identity(d, d));
        }
        let svd = self.a.clone().svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let top = svd.singular_values.get(order[0]).copied().unwrap_or(0.0);
        let nth = order.get(n - 1).map_or(0.0, |&i| svd.singular_values[i]);
        if !(nth > 1e-10 * top) {
            return Err(Error::Invalid(format!(
                "observations span fewer than {n} dimensions (singular value {nth:e})"
            )));
        }
        let u = svd.u.expect("left singular vectors requested");
        Ok(DMatrix::from_fn(d, n, |r, c| u[(r, order[c])]))
    }

    /// `(HH^T)^{-1}` and `H^T (HH^T)^{-1}`, or a rank error.
    fn pinv_parts(&self, h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if h.nrows() != self.n || h.ncols() != self.obs_dim() {
            return Err(Error::Shape(format!(
                "encoder is {}x{}, objective expects {}x{}",
                h.nrows(),
                h.ncols(),
                self.n,
                self.obs_dim()
            )));
        }
        let gram = h * h.transpose();
        let lambda_min = gram.clone().symmetric_eigenvalues().min();
        let sigma_min = lambda_min.max(0.0).sqrt();
        if !(sigma_min >= ENCODER_RANK_TOL) {
            return Err(Error::RankDeficientEncoder { sigma_min });
        }
        let m = gram
            .cholesky()
            .ok_or(Error::RankDeficientEncoder { sigma_min })?
            .inverse();
        let p = h.transpose() * &m;
        Ok((m, p))
    }

    pub fn value(&self, h: &DMatrix<f64>) -> Result<ObjectiveTerms> {
        Ok(self.evaluate(h, false)?.0)
    }

    pub fn value_and_gradient(&self, h: &DMatrix<f64>) -> Result<(ObjectiveTerms, DMatrix<f64>)> {
        let (terms, grad) = self.evaluate(h, true)?;
        Ok((terms, grad.expect("gradient requested")))
    }

    fn evaluate(&self, h: &DMatrix<f64>, with_grad: bool) -> Result<(ObjectiveTerms, Option<DMatrix<f64>>)> {
        let (n, n_s) = (self.n, self.n_s);
        let inv_ns = 1.0 / n_s as f64;
        let (m_inv, p) = self.pinv_parts(h)?;

        let zhat = h * &self.a;
        let u = &p * &zhat;
        let th = u.map(f64::tanh);
        let w = th.map(|t| 1.0 - t * t);

        let mut y = self.v.clone();
        for m in 0..n {
            y.columns_mut(m * n_s, n_s).component_mul_assign(&w);
        }
        let t = p.tr_mul(&y);
        let score_l1 = t.iter().map(|v| v.abs()).sum::<f64>() * inv_ns;

        let resid = &th - &self.x;
        let reconstruction = resid.norm_squared() * inv_ns;
        let latent_norm = zhat.norm_squared() * inv_ns;
        let terms = ObjectiveTerms {
            score_l1,
            reconstruction,
            latent_norm,
            total: score_l1 + self.lambda1 * reconstruction + self.lambda2 * latent_norm,
        };
        if !with_grad {
            return Ok((terms, None));
        }

        let g = t.map(|v| sign(v) * inv_ns);
        let mut bar_p = &y * g.transpose();
        let bar_y = &p * &g;
        let mut bar_w = DMatrix::zeros(self.obs_dim(), n_s);
        for m in 0..n {
            bar_w += bar_y
                .columns(m * n_s, n_s)
                .component_mul(&self.v.columns(m * n_s, n_s));
        }
        // d/du (1 - tanh^2 u) = -2 tanh(u) (1 - tanh^2 u); d/du tanh u = 1 - tanh^2 u.
        let mut bar_u = bar_w.component_mul(&th.component_mul(&w)) * -2.0;
        bar_u += resid.component_mul(&w) * (2.0 * self.lambda1 * inv_ns);

        bar_p += &bar_u * zhat.transpose();
        let bar_zhat = p.tr_mul(&bar_u) + &zhat * (2.0 * self.lambda2 * inv_ns);
        let mut bar_h = &bar_zhat * self.a.transpose();

        // Pseudoinverse backward: M bar_P^T (I - P H) - P^T bar_P P^T.
        let m_barpt = &m_inv * bar_p.transpose();
        bar_h += &m_barpt - &m_barpt * &p * h;
        let pt_barp = p.tr_mul(&bar_p);
        bar_h -= pt_barp * p.transpose();
        Ok((terms, Some(bar_h)))
    }
}

/// Objective value at `enc`.
pub fn objective(enc: &EncoderLinear, batch: &ScoreDiffBatch, cfg: &GscaleConfig) -> Result<f64> {
    Ok(Objective::new(batch, cfg)?.value(enc.matrix())?.total)
}

/// Exact gradient of [`objective`] with respect to the encoder matrix, `n x d`.
/// `|.|` is differentiated as `sign(.)` with `sign(0) = 0`.
pub fn objective_gradient(enc: &EncoderLinear, batch: &ScoreDiffBatch, cfg: &GscaleConfig) -> Result<DMatrix<f64>> {
    Ok(Objective::new(batch, cfg)?.value_and_gradient(enc.matrix())?.1)
}

/// Central-difference audit of the analytic gradient. Returns
/// `||g - g_fd||_2 / max(||g_fd||_2, tiny)`.
pub fn gradient_check(obj: &Objective, h: &DMatrix<f64>, step: f64) -> Result<f64> {
    let (_, grad) = obj.value_and_gradient(h)?;
    let mut fd = DMatrix::zeros(h.nrows(), h.ncols());
    let mut probe = h.clone();
    for idx in 0..h.len() {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = obj.value(&probe)?.total;
        probe[idx] = orig - step;
        let down = obj.value(&probe)?.total;
        probe[idx] = orig;
        fd[idx] = (up - down) / (2.0 * step);
    }
    Ok((grad - &fd).norm() / fd.norm().max(f64::MIN_POSITIVE))
}
