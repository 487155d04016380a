//! Recovery metrics against ground truth.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::Dag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub l2_loss: f64,
    pub shd: usize,
    pub perm_used: Vec<usize>,
    pub scale_used: Vec<f64>,
}

/// Normalized ℓ2 loss `||Z - Ẑ' diag(c)||_F / ||Z||_F`.
///
/// `perm[m]` names the true latent that estimated coordinate `m` tracks, so
/// `Ẑ'` has column `perm[m]` equal to `Ẑ` column `m`. Each column then gets its
/// least-squares scale `c_i = <Z_i, Ẑ'_i> / <Ẑ'_i, Ẑ'_i>` (0 for a zero column).
pub fn normalized_l2(z: &DMatrix<f64>, z_hat: &DMatrix<f64>, perm: &[usize]) -> Result<(f64, Vec<f64>)> {
    if z.shape() != z_hat.shape() || perm.len() != z.ncols() {
        return Err(Error::Shape(format!(
            "latents {:?} vs estimates {:?} with {} labels",
            z.shape(),
            z_hat.shape(),
            perm.len()
        )));
    }
    if !crate::linalg::is_permutation(perm) {
        return Err(Error::Invalid("perm must be a permutation".into()));
    }
    let n = z.ncols();
    let mut aligned = DMatrix::zeros(z.nrows(), n);
    for (m, &i) in perm.iter().enumerate() {
        aligned.set_column(i, &z_hat.column(m));
    }
    let mut scales = vec![0.0; n];
    let mut err = 0.0;
    for i in 0..n {
        let zh = aligned.column(i);
        let denom = zh.dot(&zh);
        let c = if denom > 0.0 { z.column(i).dot(&zh) / denom } else { 0.0 };
        scales[i] = c;
        err += (z.column(i) - zh * c).norm_squared();
    }
    let norm = z.norm_squared();
    if !(norm > 0.0) {
        return Err(Error::Invalid("true latents are identically zero".into()));
    }
    Ok(((err / norm).sqrt(), scales))
}

/// Structural Hamming distance after mapping estimate node `m` to truth node
/// `perm[m]`. Per unordered node pair: a missing, extra or reversed edge costs 1.
pub fn shd(truth: &Dag, estimate: &Dag, perm: &[usize]) -> Result<usize> {
    let n = truth.n();
    if estimate.n() != n || perm.len() != n {
        return Err(Error::Shape("graphs and labelling must share the node count".into()));
    }
    let mapped = estimate.relabel(perm)?;
    let mut dist = 0;
    for a in 0..n {
        for b in a + 1..n {
            let t = (truth.has_edge(a, b), truth.has_edge(b, a));
            let e = (mapped.has_edge(a, b), mapped.has_edge(b, a));
            if t != e {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

pub fn evaluate(
    z: &DMatrix<f64>,
    z_hat: &DMatrix<f64>,
    truth: &Dag,
    estimate: &Dag,
    perm: &[usize],
) -> Result<EvalReport> {
    let (l2_loss, scale_used) = normalized_l2(z, z_hat, perm)?;
    Ok(EvalReport {
        l2_loss,
        shd: shd(truth, estimate, perm)?,
        perm_used: perm.to_vec(),
        scale_used,
    })
}
