//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// Smallest singular value over the `min(rows, cols)` spectrum.
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Moore-Penrose pseudoinverse via SVD with relative cutoff `1e-12 * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = 1e-12 * sigma_max;
    svd.pseudo_inverse(cutoff).expect("u and v were computed")
}

/// Pseudoinverse together with the smallest singular value, so callers can enforce
/// their own rank tolerance.
pub fn pinv_checked(m: &DMatrix<f64>, tol: f64, err: impl Fn(f64) -> Error) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sigma_min >= tol) {
        return Err(err(sigma_min));
    }
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    Ok(svd.pseudo_inverse(1e-12 * sigma_max).expect("u and v were computed"))
}

/// Permutation matrix with `P[i][perm[i]] = 1`, so `(P * A)` row `i` is row `perm[i]` of `A`.
pub fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = 1.0;
    }
    p
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

/// True iff `perm` is a bijection on `0..n`.
pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
