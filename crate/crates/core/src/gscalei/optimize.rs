//! Full-batch RMSprop over the encoder matrix.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::smallest_singular_value;
use crate::rng::SeedStream;
use crate::scores::ScoreDiffBatch;
use crate::transform::EncoderLinear;

use super::objective::{gradient_check, Objective};
use super::{GscaleConfig, Parameterization};

/// Relative-error bound of the optional pre-fit gradient audit.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// RMSprop state: `v <- decay v + (1 - decay) g^2`, `x <- x - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    lr: f64,
    decay: f64,
    eps: f64,
    mean_sq: DMatrix<f64>,
}

impl RmsProp {
    pub fn new(shape: (usize, usize), lr: f64, decay: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            decay,
            eps,
            mean_sq: DMatrix::zeros(shape.0, shape.1),
        }
    }

    pub fn step(&mut self, params: &mut DMatrix<f64>, grad: &DMatrix<f64>) {
        for ((p, &g), v) in params.iter_mut().zip(grad.iter()).zip(self.mean_sq.iter_mut()) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.lr * g / (v.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFit {
    pub encoder: EncoderLinear,
    /// Objective at every iterate, initial point included: `steps + 1` values.
    pub loss_trace: Vec<f64>,
}

/// I.i.d. `Normal(0, 1/d)` entries, re-drawn until comfortably full row rank.
pub fn random_encoder(n: usize, d: usize, seed: SeedStream) -> EncoderLinear {
    let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
    let mut rng = seed.rng();
    loop {
        let h = DMatrix::from_fn(n, d, |_, _| normal.sample(&mut rng));
        if smallest_singular_value(&h) >= 1e-6 {
            return EncoderLinear::new(h);
        }
    }
}

/// Minimizes the relaxed objective from `init` (random when `None`).
///
/// Under [`Parameterization::DataSubspace`] the iterate is `K U^T` and RMSprop
/// runs on `K`; the initial matrix is projected onto the data span first.
/// With zero steps `init` is returned untouched.
pub fn fit_encoder(batch: &ScoreDiffBatch, cfg: &GscaleConfig, init: Option<EncoderLinear>) -> Result<EncoderFit> {
    cfg.validate()?;
    let obj = Objective::new(batch, cfg)?;
    let init = init.unwrap_or_else(|| random_encoder(batch.n(), batch.obs_dim(), SeedStream::new(cfg.seed)));
    if init.latent_dim() != batch.n() || init.obs_dim() != batch.obs_dim() {
        return Err(Error::Shape("initial encoder does not match the batch".into()));
    }
    if cfg.steps == 0 {
        let loss = obj.value(init.matrix())?.total;
        return Ok(EncoderFit {
            encoder: init,
            loss_trace: vec![loss],
        });
    }
    let basis = match cfg.parameterization {
        Parameterization::DataSubspace => Some(obj.data_basis()?),
        Parameterization::Full => None,
    };
    let mut params = match &basis {
        Some(u) => init.matrix() * u,
        None => init.into_matrix(),
    };
    let to_h = |k: &DMatrix<f64>| match &basis {
        Some(u) => k * u.transpose(),
        None => k.clone(),
    };
    if cfg.grad_check {
        let rel_error = gradient_check(&obj, &to_h(&params), 1e-6)?;
        if !(rel_error < GRAD_CHECK_TOL) {
            return Err(Error::GradientMismatch { rel_error });
        }
    }
    let mut opt = RmsProp::new(params.shape(), cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let h = to_h(&params);
        let evaluated = if step < cfg.steps {
            obj.value_and_gradient(&h).map(|(t, g)| (t, Some(g)))
        } else {
            obj.value(&h).map(|t| (t, None))
        };
        let (terms, grad) = match evaluated {
            Ok(v) => v,
            Err(Error::RankDeficientEncoder { sigma_min }) if step > 0 => {
                return Err(Error::RankCollapse { step, sigma_min });
            }
            Err(e) => return Err(e),
        };
        trace.push(terms.total);
        if let Some(g) = grad {
            let g = match &basis {
                Some(u) => g * u,
                None => g,
            };
            opt.step(&mut params, &g);
        }
    }
    Ok(EncoderFit {
        encoder: EncoderLinear::new(to_h(&params)),
        loss_trace: trace,
    })
}
