//! `gscale`: generate synthetic data, compute score differences, fit, evaluate
//! and run seeded experiment grids.
//!
//! Exit codes: 0 on success, 1 on a runtime error (a JSON object with `error`
//! and `message` goes to stderr) or when any experiment graph failed, 2 on a
//! usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use gscale_core::experiment::{
    run_experiment, sample_data, score_batch, EstimatorSpec, ExperimentConfig, GraphData,
};
use gscale_core::gscalei::{gradient_check, gscale_i, random_encoder, GscaleConfig, Objective, GRAD_CHECK_TOL};
use gscale_core::io::{
    read_batch, read_fit, read_json, read_matrix, read_samples, write_batch, write_fit, write_json, write_matrix,
    write_samples,
};
use gscale_core::metrics::evaluate;
use gscale_core::rng::{tags, SeedStream};
use gscale_core::scm::{QuadraticScm, ScmFile};
use gscale_core::transform::DecoderGlm;
use gscale_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gscale", version, about = "Score-based causal representation learning under hard interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed override
    #[arg(long)]
    seed: Option<u64>,
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one graph: SCM, decoder, latents and observations
    Generate {
        #[command(flatten)]
        common: Common,
        /// Latent dimension (when no --config is given)
        #[arg(long)]
        n: Option<usize>,
        /// Observed dimension (when no --config is given)
        #[arg(long)]
        d: Option<usize>,
        /// Graph index within the experiment
        #[arg(long, default_value_t = 0)]
        graph: usize,
    },
    /// Compute the score-difference batch of a generated graph
    Scores {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`
        #[arg(long)]
        input: PathBuf,
        /// Noise scale; overrides the estimator of the configuration
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Run GSCALE-I on a persisted batch
    Fit {
        #[command(flatten)]
        common: Common,
        /// Directory written by `scores`
        #[arg(long)]
        batch: PathBuf,
        /// Search over couplings of the two environment sets
        #[arg(long)]
        uncoupled: bool,
    },
    /// Compare a persisted fit against the generating truth
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `fit`
        #[arg(long)]
        fit: PathBuf,
    },
    /// Run a full seeded experiment
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Use 100 graphs
        #[arg(long)]
        full: bool,
    },
    /// Audit the analytic objective gradient against central differences
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long = "n-s", default_value_t = 20)]
        n_s: usize,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Invalid("--out is required".into()))
}

fn experiment_config(common: &Common, n: Option<usize>, d: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, n, d) {
        (Some(path), None, None) => read_json(path)?,
        (None, Some(n), Some(d)) => ExperimentConfig::new(n, d),
        (Some(_), _, _) => return Err(Error::Invalid("--config and --n/--d are exclusive".into())),
        _ => return Err(Error::Invalid("give --config or both --n and --d".into())),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn generate(common: &Common, n: Option<usize>, d: Option<usize>, graph: usize) -> Result<Value> {
    let out = require_out(common)?;
    let cfg = experiment_config(common, n, d)?;
    if graph >= cfg.n_graphs {
        return Err(Error::Invalid(format!("graph {graph} outside 0..{}", cfg.n_graphs)));
    }
    let data = sample_data(&cfg, graph)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let manifest = json!({ "graph": graph, "graph_seed": data.graph_seed });
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("scm.json"), &data.scm.to_file())?;
    write_matrix(&out.join("decoder.csv"), data.decoder.matrix())?;
    write_samples(&out.join("z.csv"), "z", &data.z)?;
    write_samples(&out.join("x.csv"), "x", &data.decoder.decode_rows(&data.z))?;
    Ok(manifest)
}

fn read_generated(dir: &Path) -> Result<(GraphData, ExperimentConfig)> {
    let manifest: Value = read_json(&dir.join("manifest.json"))?;
    let graph_seed = manifest["graph_seed"]
        .as_u64()
        .ok_or_else(|| Error::Invalid("manifest.json lacks graph_seed".into()))?;
    let scm_file: ScmFile = read_json(&dir.join("scm.json"))?;
    let data = GraphData {
        graph_seed,
        scm: QuadraticScm::from_file(&scm_file)?,
        decoder: DecoderGlm::new(read_matrix(&dir.join("decoder.csv"))?)?,
        z: read_samples(&dir.join("z.csv"))?,
    };
    Ok((data, read_json(&dir.join("config.json"))?))
}

fn scores(common: &Common, input: &Path, tau: Option<f64>) -> Result<Value> {
    let out = require_out(common)?;
    let (data, generated_cfg) = read_generated(input)?;
    let mut estimator = match &common.config {
        Some(path) => read_json::<ExperimentConfig>(path)?.estimator,
        None => generated_cfg.estimator,
    };
    if let Some(tau) = tau {
        estimator = EstimatorSpec::Noised { tau };
    }
    let noise_seed = match common.seed {
        Some(s) => SeedStream::new(s),
        None => SeedStream::new(data.graph_seed).child(tags::ESTIMATOR),
    };
    let batch = score_batch(&data, estimator, noise_seed)?;
    write_batch(out, &batch)?;
    Ok(json!({
        "n": batch.n(),
        "d": batch.obs_dim(),
        "n_samples": batch.n_samples(),
        "estimator": to_value(&estimator),
    }))
}

fn fit(common: &Common, batch_dir: &Path, uncoupled: bool) -> Result<Value> {
    let out = require_out(common)?;
    let batch = read_batch(batch_dir)?;
    let mut cfg = match &common.config {
        Some(path) => read_json(path)?,
        None => GscaleConfig::for_nodes(batch.n()),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let result = gscale_i(&batch, &cfg, !uncoupled)?;
    write_fit(out, &result)?;
    Ok(json!({
        "coupling": result.coupling,
        "coupling_uncertain": result.coupling_uncertain,
        "feasible": result.feasibility.feasible,
        "final_loss": result.loss_trace.last(),
        "edges": result.graph.edges(),
    }))
}

fn eval(common: &Common, data_dir: &Path, fit_dir: &Path) -> Result<Value> {
    let scm_file: ScmFile = read_json(&data_dir.join("scm.json"))?;
    let scm = QuadraticScm::from_file(&scm_file)?;
    let z = read_samples(&data_dir.join("z.csv"))?;
    let fit = read_fit(fit_dir)?;
    let report = evaluate(&z, &fit.z_hat, &scm.dag, &fit.graph, &scm.targets.env1)?;
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(to_value(&report))
}

fn experiment(common: &Common, full: bool) -> Result<(Value, bool)> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Invalid("--config is required".into()))?;
    let mut cfg: ExperimentConfig = read_json(path)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if full {
        cfg.n_graphs = 100;
    }
    let report = run_experiment(&cfg)?;
    Ok((to_value(&report.aggregate), report.any_failed()))
}

fn gradcheck(common: &Common, n: usize, d: usize, n_s: usize, step: f64) -> Result<Value> {
    let mut cfg = ExperimentConfig::new(n, d);
    cfg.n_graphs = 1;
    cfg.n_s = Some(n_s);
    if let Some(path) = &common.config {
        cfg.gscale = Some(read_json(path)?);
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let data = sample_data(&cfg, 0)?;
    let noise_seed = SeedStream::new(data.graph_seed).child(tags::ESTIMATOR);
    let batch = score_batch(&data, cfg.estimator, noise_seed)?;
    let obj = Objective::new(&batch, &cfg.gscale_config())?;
    let h = random_encoder(n, d, SeedStream::new(data.graph_seed).child(tags::INIT));
    let rel_error = gradient_check(&obj, h.matrix(), step)?;
    if !(rel_error < GRAD_CHECK_TOL) {
        return Err(Error::GradientMismatch { rel_error });
    }
    let report = json!({ "rel_error": rel_error, "tolerance": GRAD_CHECK_TOL, "n": n, "d": d, "n_s": n_s });
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    Ok(report)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let value = match &cli.command {
        Command::Generate { common, n, d, graph } => generate(common, *n, *d, *graph)?,
        Command::Scores { common, input, tau } => scores(common, input, *tau)?,
        Command::Fit {
            common,
            batch,
            uncoupled,
        } => fit(common, batch, *uncoupled)?,
        Command::Eval { common, data, fit } => eval(common, data, fit)?,
        Command::Experiment { common, full } => {
            let (aggregate, failed) = experiment(common, *full)?;
            print_json(&aggregate);
            if failed {
                let msg = json!({
                    "error": "graph_failures",
                    "message": format!("{} of {} graphs failed", aggregate["n_failed"], aggregate["n_graphs"]),
                });
                eprintln!("{msg}");
                return Ok(ExitCode::FAILURE);
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Gradcheck {
            common,
            n,
            d,
            n_s,
            step,
        } => gradcheck(common, *n, *d, *n_s, *step)?,
    };
    print_json(&value);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
