//! The GSCALE-I pipeline.
//!
//! 1. Score differences arrive as a [`ScoreDiffBatch`].
//! 2. The encoder is fitted by minimizing the relaxed score-variation objective
//!    (coupled), or once per relabelling of the second environment set until the
//!    coupling constraints hold (uncoupled).
//! 3. Rows of the fitted encoder are permuted so `D_t` is as diagonal as possible,
//!    and the latents are estimated as `ẑ = H* arctanh(x)`.
//! 4. The latent DAG is thresholded out of the observational score-change matrix.

mod assignment;
mod config;
mod graph;
mod objective;
mod optimize;

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;

pub use assignment::{align_permutation, max_weight_assignment, permutation_for_nonzero_diagonal};
pub use config::{GraphMode, GraphNormalization, GscaleConfig, Parameterization};
pub use graph::{feasibility_check, normalize_for_graph, recover_graph, FeasibilityReport, Violation};
pub use objective::{gradient_check, objective, objective_gradient, Objective, ObjectiveTerms};
pub use optimize::{fit_encoder, random_encoder, EncoderFit, RmsProp, GRAD_CHECK_TOL};

use crate::error::{Error, Result};
use crate::scm::Dag;
use crate::scores::{score_change_matrices, ScoreChangeMatrices, ScoreDiffBatch};
use crate::transform::EncoderLinear;

/// Outputs of one GSCALE-I run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Fitted encoder with rows aligned to the environment order.
    pub h_star: EncoderLinear,
    /// Alignment applied to the raw fit: row `i` of `h_star` is row `perm[i]` of it.
    pub perm: Vec<usize>,
    /// Score-change matrices at `h_star`.
    pub d_matrices: ScoreChangeMatrices,
    pub loss_trace: Vec<f64>,
    pub graph: Dag,
    /// Latent estimates `h_star(x)` of the observational samples, `n_s x n`.
    pub z_hat: DMatrix<f64>,
    /// Relabelling of the second environment set the fit was run under.
    pub coupling: Vec<usize>,
    /// Set when no relabelling passed the feasibility check.
    pub coupling_uncertain: bool,
    pub feasibility: FeasibilityReport,
}

/// Steps 3 and 4 on a finished encoder fit.
fn finish(batch: &ScoreDiffBatch, cfg: &GscaleConfig, fit: EncoderFit, coupling: Vec<usize>) -> Result<FitResult> {
    let raw = score_change_matrices(&fit.encoder, batch)?;
    let perm = align_permutation(&raw);
    let h_star = fit.encoder.permute_rows(&perm);
    let d_matrices = score_change_matrices(&h_star, batch)?;
    let identity: Vec<usize> = (0..batch.n()).collect();
    let graph = recover_graph(&d_matrices, &identity, cfg);
    let z_hat = h_star.encode_rows(&batch.x_samples)?;
    let feasibility = feasibility_check(&d_matrices, cfg);
    Ok(FitResult {
        h_star,
        perm,
        d_matrices,
        loss_trace: fit.loss_trace,
        graph,
        z_hat,
        coupling,
        coupling_uncertain: false,
        feasibility,
    })
}

/// Searches relabellings `pi` of the second environment set in lexicographic
/// order, fitting an encoder for each, and returns the first whose fit passes
/// [`feasibility_check`]. When none passes, the relabelling with the smallest
/// violation mass is returned with `coupling_uncertain` set.
///
/// Relabellings are fitted concurrently; the selection rule does not depend on
/// completion order.
pub fn uncoupled_search(batch: &ScoreDiffBatch, cfg: &GscaleConfig) -> Result<(Vec<usize>, FitResult)> {
    let n = batch.n();
    if n > cfg.max_search_n {
        return Err(Error::BudgetExceeded { n, guard: cfg.max_search_n });
    }
    let candidates: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let fits: Vec<Result<FitResult>> = candidates
        .par_iter()
        .map(|pi| {
            let relabelled = batch.relabel_second(pi);
            let fit = fit_encoder(&relabelled, cfg, None)?;
            finish(&relabelled, cfg, fit, pi.clone())
        })
        .collect();
    if let Some(found) = fits.iter().position(|f| matches!(f, Ok(r) if r.feasibility.feasible)) {
        let result = fits.into_iter().nth(found).expect("index in range")?;
        return Ok((result.coupling.clone(), result));
    }
    let mut best: Option<FitResult> = None;
    let mut first_err = None;
    for fit in fits {
        match fit {
            Ok(r) => {
                if best
                    .as_ref()
                    .is_none_or(|b| r.feasibility.violation_mass < b.feasibility.violation_mass)
                {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut r) => {
            r.coupling_uncertain = true;
            Ok((r.coupling.clone(), r))
        }
        None => Err(first_err.expect("at least one relabelling was tried")),
    }
}

/// Runs GSCALE-I end to end on a batch of score differences.
pub fn gscale_i(batch: &ScoreDiffBatch, cfg: &GscaleConfig, coupled: bool) -> Result<FitResult> {
    cfg.validate()?;
    if coupled {
        let fit = fit_encoder(batch, cfg, None)?;
        finish(batch, cfg, fit, (0..batch.n()).collect())
    } else {
        uncoupled_search(batch, cfg).map(|(_, r)| r)
    }
}
