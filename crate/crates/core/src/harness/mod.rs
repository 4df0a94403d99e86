//! Benchmark orchestration: runs a suite for every (method, seed) cell and
//! writes metrics, CSV tables, SVG plots and a manifest.
//!
//! Randomness for a cell comes from `RngStream::new(root_seed).split(seed)`:
//! child 0 generates the data shared by all methods, and each method draws
//! from a child keyed by a hash of its label. Cells are therefore independent
//! of scheduling, and adding a method never perturbs the others.

mod bvm;
mod classify;
mod closure;
pub mod config;
mod regress;
pub mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, Suite};

use crate::error::{Result, UqError};
use crate::rng::RngStream;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for a run that finished but recorded method failures.
pub const EXIT_METHOD_FAILURE: i32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub root_seed: u64,
    /// Run cells on the rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub method: Option<String>,
    pub seed: Option<u64>,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub suite: Suite,
    /// SHA-256 of the canonical config JSON, output directory excluded.
    pub config_hash: String,
    pub toolkit_version: String,
    pub root_seed: u64,
    pub metrics: String,
    pub files: Vec<OutputFile>,
    pub stages: Vec<StageTiming>,
    pub failures: Vec<MethodFailure>,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            EXIT_METHOD_FAILURE
        }
    }

    /// Files listed for `method` (any seed) whose path ends with `suffix`.
    pub fn files_for(&self, method: &str, suffix: &str) -> Vec<&OutputFile> {
        self.files
            .iter()
            .filter(|f| f.method.as_deref() == Some(method) && f.path.ends_with(suffix))
            .collect()
    }
}

/// 2 for configuration errors, 4 for I/O, 3 for anything raised by a method.
pub fn error_exit_code(err: &UqError) -> i32 {
    match err {
        UqError::Config(_) => 2,
        UqError::Io(_) | UqError::Csv(_) | UqError::Json(_) => 4,
        _ => EXIT_METHOD_FAILURE,
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_string(&cfg.without_output_dir())?;
    Ok(Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

pub(crate) fn seed_stream(root_seed: u64, seed: u64) -> RngStream {
    RngStream::new(root_seed).split(seed)
}

pub(crate) fn data_stream(root_seed: u64, seed: u64) -> RngStream {
    seed_stream(root_seed, seed).split(0)
}

/// Never 0, which is reserved for data.
fn label_stream_id(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes) | 1
}

pub(crate) fn method_stream(root_seed: u64, seed: u64, label: &str) -> RngStream {
    seed_stream(root_seed, seed).split(label_stream_id(label))
}

/// Output directory that records every file it writes.
pub(crate) struct OutDir<'a> {
    root: &'a Path,
}

/// Files written by one cell, in write order.
#[derive(Default)]
pub(crate) struct Written {
    pub files: Vec<OutputFile>,
}

impl<'a> OutDir<'a> {
    pub fn new(root: &'a Path) -> Self {
        Self { root }
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    pub fn csv<R: Serialize>(
        &self,
        written: &mut Written,
        owner: (Option<&str>, Option<u64>),
        rel: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = R>,
    ) -> Result<()> {
        let path = self.prepare(rel)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        written.files.push(OutputFile {
            method: owner.0.map(str::to_owned),
            seed: owner.1,
            path: rel.to_owned(),
        });
        Ok(())
    }

    pub fn svg(&self, written: &mut Written, owner: (Option<&str>, Option<u64>), rel: &str, plot: &svg::Plot) -> Result<()> {
        let text = svg::render_svg(plot)?;
        let path = self.prepare(rel)?;
        std::fs::write(path, text)?;
        written.files.push(OutputFile {
            method: owner.0.map(str::to_owned),
            seed: owner.1,
            path: rel.to_owned(),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let path = self.prepare(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Runs `f` for every cell, in order, optionally on the rayon pool.
pub(crate) fn run_cells<C: Sync, T: Send>(cells: &[C], parallel: bool, f: impl Fn(&C) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        cells.par_iter().map(&f).collect()
    } else {
        cells.iter().map(f).collect()
    }
}

pub(crate) struct Stopwatch {
    start: Instant,
    pub stages: Vec<StageTiming>,
}

impl Stopwatch {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: impl Into<String>) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Mean and standard error of the mean (0 for a single value).
pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and sample standard deviation (0 for a single value).
pub(crate) fn mean_sample_std(values: &[f64]) -> (f64, f64) {
    let (mean, se) = mean_se(values);
    (mean, se * (values.len() as f64).sqrt())
}

/// Runs a suite, writing `metrics.json`, `manifest.json` and per-cell
/// artifacts under `opts.out_dir`. Method failures are recorded in the
/// manifest rather than returned.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let out = OutDir::new(&opts.out_dir);
    let mut clock = Stopwatch::new();
    let outcome = match cfg {
        ExperimentConfig::Bvm(c) => bvm::run(c, opts, &out, &mut clock)?,
        ExperimentConfig::Regress(c) => regress::run(c, opts, &out, &mut clock)?,
        ExperimentConfig::Classify(c) => classify::run(c, opts, &out, &mut clock)?,
        ExperimentConfig::Closure(c) => closure::run(c, opts, &out, &mut clock)?,
    };
    out.json("metrics.json", &outcome.metrics)?;
    clock.lap("write metrics");
    let manifest = RunManifest {
        suite: cfg.suite(),
        config_hash: config_hash(cfg)?,
        toolkit_version: TOOLKIT_VERSION.into(),
        root_seed: opts.root_seed,
        metrics: "metrics.json".into(),
        files: outcome.written.files,
        stages: clock.stages,
        failures: outcome.failures,
    };
    out.json("manifest.json", &manifest)?;
    Ok(manifest)
}

/// Writes the data sets a suite would train and test on, as CSV with
/// columns `x..., y, split`, one file per seed. Without a config both the
/// regression and the two-moons sets are written with default settings for
/// seed 0. Returns the written paths relative to `out_dir`.
pub fn dump_datasets(cfg: Option<&ExperimentConfig>, root_seed: u64, out_dir: &Path) -> Result<Vec<String>> {
    let regress_default = config::RegressConfig {
        seeds: vec![0],
        data: Default::default(),
        methods: Vec::new(),
        levels: config::default_levels(),
        band_level: 0.95,
        band_points: 2,
        output_dir: None,
    };
    let classify_default: config::ClassifyConfig =
        serde_json::from_str(r#"{"seeds":[0],"methods":[]}"#).expect("default classify config");
    let (regress, classify) = match cfg {
        None => (Some(&regress_default), Some(&classify_default)),
        Some(ExperimentConfig::Regress(c)) => (Some(c), None),
        Some(ExperimentConfig::Classify(c)) => (None, Some(c)),
        Some(other) => {
            return Err(UqError::Config(format!(
                "suite {} has no data set to dump",
                other.suite().name()
            )))
        }
    };
    std::fs::create_dir_all(out_dir)?;
    let out = OutDir::new(out_dir);
    let mut written = Written::default();
    if let Some(c) = regress {
        for &seed in &c.seeds {
            let d = crate::datasets::make_regression(&c.data, &mut data_stream(root_seed, seed))?;
            let rows = [
                ("train", &d.train),
                ("test_in_domain", &d.test_in_domain),
                ("test_extrapolation", &d.test_extrapolation),
            ]
            .into_iter()
            .flat_map(|(split, data)| data.xs.iter().zip(&data.ys).map(move |(x, y)| (x[0], *y, split)));
            out.csv(&mut written, (None, Some(seed)), &format!("regression_seed_{seed}.csv"), &["x", "y", "split"], rows)?;
        }
    }
    if let Some(c) = classify {
        for &seed in &c.seeds {
            let (train, test) = classify::moons_for_seed(c, root_seed, seed)?;
            let rows = [("train", &train), ("test", &test)]
                .into_iter()
                .flat_map(|(split, data)| data.xs.iter().zip(&data.ys).map(move |(x, y)| (x[0], x[1], *y, split)));
            out.csv(&mut written, (None, Some(seed)), &format!("moons_seed_{seed}.csv"), &["x1", "x2", "y", "split"], rows)?;
        }
    }
    Ok(written.files.into_iter().map(|f| f.path).collect())
}

pub(crate) struct SuiteOutcome {
    pub metrics: serde_json::Value,
    pub written: Written,
    pub failures: Vec<MethodFailure>,
}
