//! The tanh generalized-linear decoder `x = tanh(G z)` and the linear-arctanh
//! encoder family `ẑ = H arctanh(x)`, with their Jacobians.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{pinv_checked, smallest_singular_value};

/// Full-column-rank threshold checked when a decoder is constructed.
pub const DECODER_RANK_TOL: f64 = 1e-9;
/// Sampled decoders are re-drawn below this smallest singular value.
pub const DECODER_REDRAW_TOL: f64 = 1e-6;
pub const JACOBIAN_RANK_TOL: f64 = 1e-10;
pub const ENCODER_RANK_TOL: f64 = 1e-10;
/// `encode` rejects observations with `|x_j| >= 1 - ARCTANH_GUARD`.
pub const ARCTANH_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGlm {
    g: DMatrix<f64>,
}

impl DecoderGlm {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if g.nrows() < g.ncols() || g.ncols() == 0 {
            return Err(Error::Shape(format!("decoder must be d x n with d >= n >= 1, got {}x{}", g.nrows(), g.ncols())));
        }
        let sigma_min = smallest_singular_value(&g);
        if !(sigma_min > DECODER_RANK_TOL) {
            return Err(Error::RankDeficientDecoder { sigma_min });
        }
        Ok(DecoderGlm { g })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn latent_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn decode(&self, z: &[f64]) -> DVector<f64> {
        (&self.g * DVector::from_column_slice(z)).map(f64::tanh)
    }

    /// Decodes every row of an `n_s x n` matrix into an `n_s x d` matrix.
    pub fn decode_rows(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        (z * self.g.transpose()).map(f64::tanh)
    }

    /// `diag(1 - tanh^2(G z)) G`, shape `d x n`.
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let x = self.decode(z);
        let mut j = self.g.clone();
        for (r, xr) in x.iter().enumerate() {
            let w = 1.0 - xr * xr;
            j.row_mut(r).scale_mut(w);
        }
        j
    }

    /// Observed-space score difference `[J_g(z)^†]^T v` at `x = decode(z)`.
    pub fn observed_score_diff(&self, z: &[f64], latent_diff: &[f64]) -> Result<DVector<f64>> {
        let j = self.jacobian(z);
        let jp = pinv_checked(&j, JACOBIAN_RANK_TOL, |sigma_min| Error::RankDeficientJacobian { sigma_min })?;
        Ok(jp.tr_mul(&DVector::from_column_slice(latent_diff)))
    }

    /// The exact inverse on the image: the encoder with `H = G^†`.
    pub fn true_encoder(&self) -> EncoderLinear {
        EncoderLinear::new(crate::linalg::pinv(&self.g))
    }
}

/// Decoder with i.i.d. `Normal(0, 1/d)` entries, re-drawn while nearly singular.
pub fn sample_decoder<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<DecoderGlm> {
    if d < n || n == 0 {
        return Err(Error::Invalid(format!("need d >= n >= 1, got n={n}, d={d}")));
    }
    let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
    loop {
        let g = DMatrix::from_fn(d, n, |_, _| normal.sample(rng));
        if smallest_singular_value(&g) >= DECODER_REDRAW_TOL {
            return DecoderGlm::new(g);
        }
    }
}

fn arctanh_checked(x: &[f64]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.len());
    for (j, &v) in x.iter().enumerate() {
        if !(v.abs() < 1.0 - ARCTANH_GUARD) {
            return Err(Error::DomainViolation { index: j, value: v });
        }
        out[j] = v.atanh();
    }
    Ok(out)
}

/// Row-wise arctanh of an `n_s x d` observation matrix.
pub fn arctanh_rows(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some((idx, &v)) = x.iter().enumerate().find(|(_, v)| !(v.abs() < 1.0 - ARCTANH_GUARD)) {
        return Err(Error::DomainViolation { index: idx / x.nrows(), value: v });
    }
    Ok(x.map(f64::atanh))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLinear {
    h: DMatrix<f64>,
}

impl EncoderLinear {
    pub fn new(h: DMatrix<f64>) -> Self {
        EncoderLinear { h }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.h
    }

    pub fn latent_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.ncols()
    }

    /// `H^†`, failing if `H` is not of full row rank.
    pub fn pinv(&self) -> Result<DMatrix<f64>> {
        if self.h.nrows() > self.h.ncols() {
            return Err(Error::RankDeficientEncoder { sigma_min: 0.0 });
        }
        pinv_checked(&self.h, ENCODER_RANK_TOL, |sigma_min| Error::RankDeficientEncoder { sigma_min })
    }

    pub fn encode(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.obs_dim() {
            return Err(Error::Shape(format!("observation has {} entries, encoder expects {}", x.len(), self.obs_dim())));
        }
        Ok(&self.h * arctanh_checked(x)?)
    }

    /// Encodes every row of an `n_s x d` matrix into an `n_s x n` matrix.
    pub fn encode_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.obs_dim() {
            return Err(Error::Shape("observation width does not match encoder".into()));
        }
        Ok(arctanh_rows(x)? * self.h.transpose())
    }

    /// `h^{-1}(ẑ) = tanh(H^† ẑ)`.
    pub fn inverse(&self, zhat: &[f64]) -> Result<DVector<f64>> {
        Ok((self.pinv()? * DVector::from_column_slice(zhat)).map(f64::tanh))
    }

    /// `J_{h^{-1}}(ẑ) = diag(1 - tanh^2(H^† ẑ)) H^†`, shape `d x n`.
    pub fn inverse_jacobian(&self, zhat: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.pinv()?;
        Ok(inverse_jacobian_with(&p, zhat))
    }

    /// Same encoder with rows reordered: row `i` of the result is row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> EncoderLinear {
        EncoderLinear::new(DMatrix::from_fn(self.h.nrows(), self.h.ncols(), |i, j| self.h[(perm[i], j)]))
    }
}

pub(crate) fn inverse_jacobian_with(pinv: &DMatrix<f64>, zhat: &[f64]) -> DMatrix<f64> {
    let u = pinv * DVector::from_column_slice(zhat);
    let mut j = pinv.clone();
    for (r, ur) in u.iter().enumerate() {
        let t = ur.tanh();
        j.row_mut(r).scale_mut(1.0 - t * t);
    }
    j
}
