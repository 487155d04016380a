//! On-disk formats.
//!
//! Matrices are headerless CSV, one row per line, every entry printed with 17
//! significant digits so that a write/read cycle is exact. Sample files carry a
//! header row (`z_0, z_1, ...` or `x_0, ...`). Everything structured is JSON.
//!
//! Directory layouts:
//!
//! ```text
//! batch/    manifest.json  x_samples.csv  obs_env1_<m>.csv  obs_env2_<m>.csv  env1_env2_<m>.csv
//! fit/      manifest.json  h_star.csv  perm.json  d_t.csv  d.csv  d_tilde.csv
//!           graph.json  loss_trace.csv  z_hat.csv
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gscalei::{FeasibilityReport, FitResult};
use crate::scm::Dag;
use crate::scores::{ScoreChangeMatrices, ScoreDiffBatch};
use crate::transform::EncoderLinear;

pub const BATCH_SCHEMA_VERSION: u32 = 1;
pub const FIT_SCHEMA_VERSION: u32 = 1;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("{}: cannot parse {s:?} as a number", path.display())))
}

fn write_rows(path: &Path, header: Option<Vec<String>>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path, has_header: bool) -> Result<(Option<Vec<String>>, DMatrix<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(has_header).from_path(path)?;
    let header = if has_header {
        Some(r.headers()?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| parse_f64(s, path)).collect::<Result<_>>()?);
    }
    let cols = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);
    if rows.iter().any(|row| row.len() != cols) {
        return Err(Error::Shape(format!("{}: ragged rows", path.display())));
    }
    let m = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    Ok((header, m))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_rows(path, None, m)
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_rows(path, false)?.1)
}

/// Sample matrix with a `<prefix>_<j>` header.
pub fn write_samples(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let header = (0..m.ncols()).map(|j| format!("{prefix}_{j}")).collect();
    write_rows(path, Some(header), m)
}

pub fn read_samples(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_rows(path, true)?.1)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub schema_version: u32,
    pub n: usize,
    pub d: usize,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

const FAMILIES: [&str; 3] = ["obs_env1", "obs_env2", "env1_env2"];

pub fn write_batch(dir: &Path, batch: &ScoreDiffBatch) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join("manifest.json"),
        &BatchManifest {
            schema_version: BATCH_SCHEMA_VERSION,
            n: batch.n(),
            d: batch.obs_dim(),
            n_samples: batch.n_samples(),
            seed: batch.seed,
        },
    )?;
    write_samples(&dir.join("x_samples.csv"), "x", &batch.x_samples)?;
    for (name, fam) in FAMILIES.iter().zip([&batch.d_obs1, &batch.d_obs2, &batch.d_pair]) {
        for (m, mat) in fam.iter().enumerate() {
            write_matrix(&dir.join(format!("{name}_{m}.csv")), mat)?;
        }
    }
    Ok(())
}

pub fn read_batch(dir: &Path) -> Result<ScoreDiffBatch> {
    let man: BatchManifest = read_json(&dir.join("manifest.json"))?;
    if man.schema_version != BATCH_SCHEMA_VERSION {
        return Err(Error::Invalid(format!("unsupported batch schema version {}", man.schema_version)));
    }
    let x = read_samples(&dir.join("x_samples.csv"))?;
    let mut fams: [Vec<DMatrix<f64>>; 3] = Default::default();
    for (name, fam) in FAMILIES.iter().zip(fams.iter_mut()) {
        for m in 0..man.n {
            fam.push(read_matrix(&dir.join(format!("{name}_{m}.csv")))?);
        }
    }
    let [d_obs1, d_obs2, d_pair] = fams;
    let mut batch = ScoreDiffBatch::new(x, d_obs1, d_obs2, d_pair)?;
    if (batch.n(), batch.obs_dim(), batch.n_samples()) != (man.n, man.d, man.n_samples) {
        return Err(Error::Shape("batch files disagree with the manifest".into()));
    }
    batch.seed = man.seed;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl GraphFile {
    pub fn from_dag(dag: &Dag) -> Self {
        GraphFile {
            n: dag.n(),
            edges: dag.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }

    pub fn to_dag(&self) -> Result<Dag> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Dag::from_edges(self.n, &edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub schema_version: u32,
    pub coupling: Vec<usize>,
    pub coupling_uncertain: bool,
    pub feasibility: FeasibilityReport,
}

pub fn write_fit(dir: &Path, fit: &FitResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join("manifest.json"),
        &FitManifest {
            schema_version: FIT_SCHEMA_VERSION,
            coupling: fit.coupling.clone(),
            coupling_uncertain: fit.coupling_uncertain,
            feasibility: fit.feasibility.clone(),
        },
    )?;
    write_matrix(&dir.join("h_star.csv"), fit.h_star.matrix())?;
    write_json(&dir.join("perm.json"), &fit.perm)?;
    write_matrix(&dir.join("d_t.csv"), &fit.d_matrices.d_t)?;
    write_matrix(&dir.join("d.csv"), &fit.d_matrices.d)?;
    write_matrix(&dir.join("d_tilde.csv"), &fit.d_matrices.d_tilde)?;
    write_json(&dir.join("graph.json"), &GraphFile::from_dag(&fit.graph))?;
    let mut w = csv::Writer::from_path(dir.join("loss_trace.csv"))?;
    w.write_record(["step", "loss"])?;
    for (step, loss) in fit.loss_trace.iter().enumerate() {
        w.write_record([step.to_string(), format_f64(*loss)])?;
    }
    w.flush()?;
    write_samples(&dir.join("z_hat.csv"), "z_hat", &fit.z_hat)?;
    Ok(())
}

pub fn read_fit(dir: &Path) -> Result<FitResult> {
    let man: FitManifest = read_json(&dir.join("manifest.json"))?;
    if man.schema_version != FIT_SCHEMA_VERSION {
        return Err(Error::Invalid(format!("unsupported fit schema version {}", man.schema_version)));
    }
    let mut loss_trace = Vec::new();
    let trace_path = dir.join("loss_trace.csv");
    let mut r = csv::Reader::from_path(&trace_path)?;
    for rec in r.records() {
        let rec = rec?;
        let loss = rec
            .get(1)
            .ok_or_else(|| Error::Shape("loss_trace.csv rows need two fields".into()))?;
        loss_trace.push(parse_f64(loss, &trace_path)?);
    }
    let graph: GraphFile = read_json(&dir.join("graph.json"))?;
    Ok(FitResult {
        h_star: EncoderLinear::new(read_matrix(&dir.join("h_star.csv"))?),
        perm: read_json(&dir.join("perm.json"))?,
        d_matrices: ScoreChangeMatrices {
            d_t: read_matrix(&dir.join("d_t.csv"))?,
            d: read_matrix(&dir.join("d.csv"))?,
            d_tilde: read_matrix(&dir.join("d_tilde.csv"))?,
        },
        loss_trace,
        graph: graph.to_dag()?,
        z_hat: read_samples(&dir.join("z_hat.csv"))?,
        coupling: man.coupling,
        coupling_uncertain: man.coupling_uncertain,
        feasibility: man.feasibility,
    })
}
