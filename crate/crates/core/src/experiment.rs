//! Seeded end-to-end experiment driver.
//!
//! Graph `g` of an experiment draws everything from the stream
//! `SeedStream::new(master_seed).child(g)`: DAG, mechanisms, decoder, latent samples,
//! estimator noise, encoder initialization and (for uncoupled runs) the planted
//! target mismatch each use their own tagged child. Graphs are therefore
//! independent and may run in any order.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gscalei::{gscale_i, FitResult, GscaleConfig};
use crate::io::{format_f64, write_fit, write_json, write_matrix, write_samples};
use crate::metrics::{evaluate, EvalReport};
use crate::rng::{tags, SeedStream};
use crate::scm::{sample_er_dag, sample_mechanisms, Dag, Environment, QuadraticScm, Targets};
use crate::scores::{build_batch, NoisedEstimator, OracleEstimator, ScoreDiffBatch};
use crate::transform::{sample_decoder, DecoderGlm};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;
pub const AGGREGATE_SCHEMA_VERSION: u32 = 1;

/// Column order of `results.csv`.
pub const RESULTS_COLUMNS: [&str; 8] = [
    "graph",
    "n",
    "d",
    "graph_seed",
    "l2_loss",
    "shd",
    "coupling_recovered",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Exact score differences.
    #[default]
    Oracle,
    /// Exact differences plus i.i.d. `Normal(0, tau^2)` noise on every entry.
    Noised { tau: f64 },
}

fn default_graphs() -> usize {
    10
}

fn default_density() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_graphs")]
    pub n_graphs: usize,
    /// Samples per graph; 100 for `n <= 5` and 300 otherwise when absent.
    #[serde(default)]
    pub n_s: Option<usize>,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_true")]
    pub coupled: bool,
    /// Planted mismatch `sigma` (second set targets `sigma[m]` in environment `m`)
    /// for uncoupled runs. A random non-identity permutation is drawn per graph
    /// when absent.
    #[serde(default)]
    pub uncoupled_mismatch: Option<Vec<usize>>,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    /// Fitting hyperparameters; `GscaleConfig::for_nodes(n)` when absent. The
    /// initialization seed is always re-derived per graph.
    #[serde(default)]
    pub gscale: Option<GscaleConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    /// Lifts the `n <= max_search_n` guard of the uncoupled search.
    #[serde(default)]
    pub allow_large_search: bool,
}

impl ExperimentConfig {
    pub fn new(n: usize, d: usize) -> Self {
        ExperimentConfig {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            n,
            d,
            n_graphs: default_graphs(),
            n_s: None,
            density: default_density(),
            coupled: true,
            uncoupled_mismatch: None,
            estimator: EstimatorSpec::Oracle,
            gscale: None,
            output_dir: None,
            master_seed: 0,
            allow_large_search: false,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_s.unwrap_or(if self.n <= 5 { 100 } else { 300 })
    }

    pub fn gscale_config(&self) -> GscaleConfig {
        let mut cfg = self.gscale.clone().unwrap_or_else(|| GscaleConfig::for_nodes(self.n));
        if self.allow_large_search {
            cfg.max_search_n = cfg.max_search_n.max(self.n);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported experiment schema version {}",
                self.schema_version
            )));
        }
        if self.n == 0 || self.n > self.d {
            return Err(Error::Invalid(format!("need 1 <= n <= d, got n = {}, d = {}", self.n, self.d)));
        }
        if self.n_graphs == 0 || self.n_samples() == 0 {
            return Err(Error::Invalid("n_graphs and n_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::Invalid(format!("density {} outside [0, 1]", self.density)));
        }
        if let EstimatorSpec::Noised { tau } = self.estimator {
            if !(tau >= 0.0) {
                return Err(Error::Invalid(format!("noise scale {tau} must be non-negative")));
            }
        }
        if let Some(sigma) = &self.uncoupled_mismatch {
            if self.coupled {
                return Err(Error::Invalid("uncoupled_mismatch given for a coupled experiment".into()));
            }
            if sigma.len() != self.n || !crate::linalg::is_permutation(sigma) {
                return Err(Error::Invalid("uncoupled_mismatch must be a permutation of the nodes".into()));
            }
        }
        let gs = self.gscale_config();
        gs.validate()?;
        if !self.coupled && self.n > gs.max_search_n {
            return Err(Error::BudgetExceeded {
                n: self.n,
                guard: gs.max_search_n,
            });
        }
        Ok(())
    }
}

/// Everything sampled for one graph before fitting.
#[derive(Debug, Clone)]
pub struct GraphInstance {
    pub graph_seed: u64,
    pub scm: QuadraticScm,
    pub decoder: DecoderGlm,
    /// Observational latents, `n_s x n`.
    pub z: DMatrix<f64>,
    pub batch: ScoreDiffBatch,
}

impl GraphInstance {
    pub fn dag(&self) -> &Dag {
        &self.scm.dag
    }
}

fn planted_mismatch(cfg: &ExperimentConfig, stream: SeedStream) -> Vec<usize> {
    if let Some(sigma) = &cfg.uncoupled_mismatch {
        return sigma.clone();
    }
    let identity: Vec<usize> = (0..cfg.n).collect();
    if cfg.n < 2 {
        return identity;
    }
    let mut rng = stream.child(tags::COUPLING).rng();
    let mut sigma = identity.clone();
    while sigma == identity {
        sigma.shuffle(&mut rng);
    }
    sigma
}

/// Ground truth of one graph, before any scores are computed.
#[derive(Debug, Clone)]
pub struct GraphData {
    pub graph_seed: u64,
    pub scm: QuadraticScm,
    pub decoder: DecoderGlm,
    /// Observational latents, `n_s x n`.
    pub z: DMatrix<f64>,
}

/// Samples the SCM, decoder and latents of graph `g`. Environment `m` of the
/// first set intervenes on node `m`.
pub fn sample_data(cfg: &ExperimentConfig, g: usize) -> Result<GraphData> {
    let stream = SeedStream::new(cfg.master_seed).child(g as u64);
    let n = cfg.n;
    let dag = sample_er_dag(n, cfg.density, &mut stream.child(tags::DAG).rng())?;
    let identity: Vec<usize> = (0..n).collect();
    let targets = if cfg.coupled {
        Targets::coupled(identity)?
    } else {
        Targets::uncoupled(identity, &planted_mismatch(cfg, stream))?
    };
    let scm = sample_mechanisms(&dag, &mut stream.child(tags::MECHANISMS).rng()).with_targets(targets)?;
    let decoder = sample_decoder(n, cfg.d, &mut stream.child(tags::DECODER).rng())?;
    let z = scm.sample_latent(Environment::Obs, cfg.n_samples(), &mut stream.child(tags::LATENT_OBS).rng());
    Ok(GraphData {
        graph_seed: stream.key(),
        scm,
        decoder,
        z,
    })
}

/// Score differences of `data` at its observations `tanh(G z)`. Estimator noise
/// is drawn from `noise_seed`.
pub fn score_batch(data: &GraphData, estimator: EstimatorSpec, noise_seed: SeedStream) -> Result<ScoreDiffBatch> {
    let n = data.scm.n();
    let x = data.decoder.decode_rows(&data.z);
    let oracle = OracleEstimator::new(&data.scm, &data.decoder, &data.z);
    let batch = match estimator {
        EstimatorSpec::Oracle => build_batch(&oracle, x, n)?,
        EstimatorSpec::Noised { tau } => build_batch(&NoisedEstimator::new(oracle, tau, noise_seed)?, x, n)?,
    };
    Ok(batch.with_seed(data.graph_seed))
}

/// Samples graph `g` of the experiment and its score differences.
pub fn sample_instance(cfg: &ExperimentConfig, g: usize) -> Result<GraphInstance> {
    let data = sample_data(cfg, g)?;
    let noise_seed = SeedStream::new(data.graph_seed).child(tags::ESTIMATOR);
    let batch = score_batch(&data, cfg.estimator, noise_seed)?;
    Ok(GraphInstance {
        graph_seed: data.graph_seed,
        scm: data.scm,
        decoder: data.decoder,
        z: data.z,
        batch,
    })
}

/// Hyperparameters for graph `g`: the configured ones with the initialization
/// seed taken from the graph's stream.
pub fn graph_gscale_config(cfg: &ExperimentConfig, g: usize) -> GscaleConfig {
    let mut gs = cfg.gscale_config();
    gs.seed = SeedStream::new(cfg.master_seed).child(g as u64).child(tags::INIT).key();
    gs
}

#[derive(Debug, Clone)]
pub struct GraphOutcome {
    pub instance: GraphInstance,
    pub fit: FitResult,
    pub eval: EvalReport,
    /// Whether the selected relabelling equals the planted one (uncoupled runs).
    pub coupling_recovered: Option<bool>,
}

/// Fits and evaluates graph `g`. Estimated coordinate `m` is compared against the
/// node targeted by environment `m`.
pub fn run_graph(cfg: &ExperimentConfig, g: usize) -> Result<GraphOutcome> {
    let instance = sample_instance(cfg, g)?;
    let gs = graph_gscale_config(cfg, g);
    let fit = gscale_i(&instance.batch, &gs, cfg.coupled)?;
    let targets = &instance.scm.targets;
    let eval = evaluate(&instance.z, &fit.z_hat, instance.dag(), &fit.graph, &targets.env1)?;
    let coupling_recovered = (!cfg.coupled).then(|| fit.coupling == targets.true_coupling());
    Ok(GraphOutcome {
        instance,
        fit,
        eval,
        coupling_recovered,
    })
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub graph: usize,
    pub n: usize,
    pub d: usize,
    pub graph_seed: u64,
    pub l2_loss: Option<f64>,
    pub shd: Option<usize>,
    pub coupling_recovered: Option<bool>,
    /// `ok`, or the error code of the failure.
    pub status: String,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, median, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub n_graphs: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub l2_loss: Option<Summary>,
    pub shd: Option<Summary>,
    /// Graphs whose planted coupling was recovered (uncoupled runs only).
    pub coupling_recovered: Option<usize>,
    pub total_runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<GraphRecord>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    pub fn any_failed(&self) -> bool {
        self.aggregate.n_failed > 0
    }
}

fn write_graph_artifacts(dir: &Path, out: &GraphOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("scm.json"), &out.instance.scm.to_file())?;
    write_matrix(&dir.join("decoder.csv"), out.instance.decoder.matrix())?;
    write_samples(&dir.join("z.csv"), "z", &out.instance.z)?;
    write_fit(&dir.join("fit"), &out.fit)?;
    write_json(&dir.join("eval.json"), &out.eval)
}

pub fn graph_dir(output_dir: &Path, g: usize) -> PathBuf {
    output_dir.join("graphs").join(format!("graph_{g:04}"))
}

fn run_one(cfg: &ExperimentConfig, g: usize) -> GraphRecord {
    let start = Instant::now();
    let graph_seed = SeedStream::new(cfg.master_seed).child(g as u64).key();
    let outcome = run_graph(cfg, g).and_then(|out| {
        if let Some(dir) = &cfg.output_dir {
            write_graph_artifacts(&graph_dir(dir, g), &out)?;
        }
        Ok(out)
    });
    let mut rec = GraphRecord {
        graph: g,
        n: cfg.n,
        d: cfg.d,
        graph_seed,
        l2_loss: None,
        shd: None,
        coupling_recovered: None,
        status: "ok".into(),
        runtime_s: 0.0,
    };
    match outcome {
        Ok(out) => {
            rec.l2_loss = Some(out.eval.l2_loss);
            rec.shd = Some(out.eval.shd);
            rec.coupling_recovered = out.coupling_recovered;
        }
        Err(e) => rec.status = e.code().into(),
    }
    rec.runtime_s = start.elapsed().as_secs_f64();
    rec
}

/// Writes `results.csv` (no timing columns, so equal seeds give equal bytes).
pub fn write_results_csv(path: &Path, records: &[GraphRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_COLUMNS)?;
    for r in records {
        w.write_record([
            r.graph.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.graph_seed.to_string(),
            r.l2_loss.map(format_f64).unwrap_or_default(),
            r.shd.map(|s| s.to_string()).unwrap_or_default(),
            r.coupling_recovered.map(|b| b.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings_csv(path: &Path, records: &[GraphRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["graph", "runtime_s"])?;
    for r in records {
        w.write_record([r.graph.to_string(), format!("{:.3}", r.runtime_s)])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every graph (concurrently), then writes `results.csv`, `timings.csv`,
/// `aggregate.json` and the per-graph artifacts under `output_dir` when set.
/// Failing graphs are recorded with their error code and do not stop the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("config.json"), cfg)?;
    }
    let records: Vec<GraphRecord> = (0..cfg.n_graphs).into_par_iter().map(|g| run_one(cfg, g)).collect();
    let ok: Vec<&GraphRecord> = records.iter().filter(|r| r.status == "ok").collect();
    let l2: Vec<f64> = ok.iter().filter_map(|r| r.l2_loss).collect();
    let shd: Vec<f64> = ok.iter().filter_map(|r| r.shd.map(|s| s as f64)).collect();
    let aggregate = Aggregate {
        schema_version: AGGREGATE_SCHEMA_VERSION,
        config: cfg.clone(),
        n_graphs: cfg.n_graphs,
        n_ok: ok.len(),
        n_failed: records.len() - ok.len(),
        l2_loss: Summary::of(&l2),
        shd: Summary::of(&shd),
        coupling_recovered: (!cfg.coupled)
            .then(|| ok.iter().filter(|r| r.coupling_recovered == Some(true)).count()),
        total_runtime_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output_dir {
        write_results_csv(&dir.join("results.csv"), &records)?;
        write_timings_csv(&dir.join("timings.csv"), &records)?;
        write_json(&dir.join("aggregate.json"), &aggregate)?;
    }
    Ok(ExperimentReport { records, aggregate })
}
