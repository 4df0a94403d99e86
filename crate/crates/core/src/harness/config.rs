//! Experiment configuration. Every struct rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{MoonsConfig, RegressionDataConfig};
use crate::ensemble::EnsembleConfig;
use crate::error::{Result, UqError};
use crate::gp::HyperGrid;
use crate::infer::{HmcConfig, ViConfig};
use crate::nn::{Activation, MlpSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Bvm(BvmConfig),
    Regress(RegressConfig),
    Classify(ClassifyConfig),
    Closure(ClosureConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bvm,
    Regress,
    Classify,
    Closure,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Bvm => "bvm",
            Suite::Regress => "regress",
            Suite::Classify => "classify",
            Suite::Closure => "closure",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bvm" => Ok(Suite::Bvm),
            "regress" => Ok(Suite::Regress),
            "classify" => Ok(Suite::Classify),
            "closure" => Ok(Suite::Closure),
            other => Err(UqError::Config(format!("unknown suite {other:?}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn suite(&self) -> Suite {
        match self {
            ExperimentConfig::Bvm(_) => Suite::Bvm,
            ExperimentConfig::Regress(_) => Suite::Regress,
            ExperimentConfig::Classify(_) => Suite::Classify,
            ExperimentConfig::Closure(_) => Suite::Closure,
        }
    }

    pub fn seeds(&self) -> &[u64] {
        match self {
            ExperimentConfig::Bvm(c) => &c.seeds,
            ExperimentConfig::Regress(c) => &c.seeds,
            ExperimentConfig::Classify(c) => &c.seeds,
            ExperimentConfig::Closure(c) => &c.seeds,
        }
    }

    pub fn output_dir(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::Bvm(c) => c.output_dir.as_deref(),
            ExperimentConfig::Regress(c) => c.output_dir.as_deref(),
            ExperimentConfig::Classify(c) => c.output_dir.as_deref(),
            ExperimentConfig::Closure(c) => c.output_dir.as_deref(),
        }
    }

    /// Copy without the output directory, which does not affect results.
    pub fn without_output_dir(&self) -> Self {
        let mut c = self.clone();
        match &mut c {
            ExperimentConfig::Bvm(c) => c.output_dir = None,
            ExperimentConfig::Regress(c) => c.output_dir = None,
            ExperimentConfig::Classify(c) => c.output_dir = None,
            ExperimentConfig::Closure(c) => c.output_dir = None,
        }
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| UqError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UqError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds().is_empty() {
            return Err(UqError::Config("at least one seed is required".into()));
        }
        let labels: Vec<String> = match self {
            ExperimentConfig::Regress(c) => c.methods.iter().map(RegressMethod::label).collect(),
            ExperimentConfig::Classify(c) => c.methods.iter().map(ClassifyMethod::label).collect(),
            ExperimentConfig::Bvm(c) => {
                if c.ns.is_empty() || c.ns.contains(&0) {
                    return Err(UqError::Config("bvm needs a nonempty list of positive sample sizes".into()));
                }
                if !(c.p > 0.0 && c.p < 1.0) {
                    return Err(UqError::Config(format!("bvm p must lie in (0, 1), got {}", c.p)));
                }
                vec!["bvm".into()]
            }
            ExperimentConfig::Closure(c) => {
                if c.replicas == 0 || c.n_points == 0 {
                    return Err(UqError::Config("closure needs replicas >= 1 and n_points >= 1".into()));
                }
                if !(c.sigma_scale > 0.0) {
                    return Err(UqError::Config("closure sigma_scale must be positive".into()));
                }
                vec![c.estimator.label().into()]
            }
        };
        if labels.is_empty() {
            return Err(UqError::Config("at least one method is required".into()));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(UqError::Config("method labels must be unique; set `label` to disambiguate".into()));
        }
        if let Some(bad) = labels.iter().find(|l| l.is_empty() || l.contains(['/', '\\']) || l.starts_with('.')) {
            return Err(UqError::Config(format!("method label {bad:?} is not a valid directory name")));
        }
        Ok(())
    }
}

/// Hidden layer widths and activation; input and output sizes come from the suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::default(),
        }
    }
}

impl NetConfig {
    pub fn spec(&self, input_dim: usize, output_dim: usize) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_widths: self.hidden.clone(),
            output_dim,
            activation: self.activation,
        }
    }
}

/// Single-network training with Adam and a Gaussian weight prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "one")]
    pub prior_var: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr_final: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    2000
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            prior_var: 1.0,
            lr: default_lr(),
            epochs: default_epochs(),
            batch_size: None,
            lr_final: None,
        }
    }
}

impl TrainConfig {
    pub fn as_ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            prior_var: self.prior_var,
            lr: self.lr,
            batch_size: self.batch_size,
            lr_final: self.lr_final,
            ..EnsembleConfig::new(1, self.epochs)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvmConfig {
    #[serde(default = "default_bvm_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_ns")]
    pub ns: Vec<u64>,
    /// Beta prior `(a, b)`.
    #[serde(default = "default_bvm_prior")]
    pub prior: (f64, f64),
    /// Nodes of the density CSVs and of the distance quadrature.
    #[serde(default = "default_density_points")]
    pub density_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_bvm_seeds() -> Vec<u64> {
    (0..50).collect()
}
fn default_p() -> f64 {
    0.35
}
fn default_ns() -> Vec<u64> {
    vec![10, 100, 1000, 10_000]
}
fn default_bvm_prior() -> (f64, f64) {
    (2.0, 2.0)
}
fn default_density_points() -> usize {
    20_001
}

impl Default for BvmConfig {
    fn default() -> Self {
        Self {
            seeds: default_bvm_seeds(),
            p: default_p(),
            ns: default_ns(),
            prior: default_bvm_prior(),
            density_points: default_density_points(),
            output_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: RegressionDataConfig,
    pub methods: Vec<RegressMethod>,
    /// Nominal levels of the coverage curves.
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Level of the plotted predictive band.
    #[serde(default = "default_band_level")]
    pub band_level: f64,
    #[serde(default = "default_band_points")]
    pub band_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

pub fn default_levels() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
}
fn default_band_level() -> f64 {
    0.95
}
fn default_band_points() -> usize {
    201
}
fn default_predictive_samples() -> usize {
    100
}
fn default_calibration_fraction() -> f64 {
    1.0 / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressMethod {
    Gp {
        #[serde(default)]
        label: Option<String>,
        grid: HyperGrid,
    },
    /// Split conformal prediction over the mean of a Gaussian-head network.
    CpMlp {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        #[serde(default)]
        train: TrainConfig,
        /// Share of the training points held out for calibration.
        #[serde(default = "default_calibration_fraction")]
        calibration_fraction: f64,
    },
    Vi {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        #[serde(default)]
        vi: ViConfig,
        /// Warm start for the variational mean.
        #[serde(default)]
        pretrain: Option<TrainConfig>,
        #[serde(default = "default_predictive_samples")]
        predictive_samples: usize,
    },
    De {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        ensemble: EnsembleConfig,
    },
    Re {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        ensemble: EnsembleConfig,
    },
}

impl RegressMethod {
    pub fn kind(&self) -> &'static str {
        match self {
            RegressMethod::Gp { .. } => "gp",
            RegressMethod::CpMlp { .. } => "cp_mlp",
            RegressMethod::Vi { .. } => "vi",
            RegressMethod::De { .. } => "de",
            RegressMethod::Re { .. } => "re",
        }
    }

    pub fn label(&self) -> String {
        let label = match self {
            RegressMethod::Gp { label, .. }
            | RegressMethod::CpMlp { label, .. }
            | RegressMethod::Vi { label, .. }
            | RegressMethod::De { label, .. }
            | RegressMethod::Re { label, .. } => label,
        };
        label.clone().unwrap_or_else(|| self.kind().into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: MoonsConfig,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    /// Cells per axis of the uncertainty maps.
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// `(x_lo, x_hi, y_lo, y_hi)` of the uncertainty maps.
    #[serde(default = "default_grid_bounds")]
    pub grid_bounds: (f64, f64, f64, f64),
    /// Write uncertainty maps for the first seed only.
    #[serde(default = "yes")]
    pub maps_first_seed_only: bool,
    pub methods: Vec<ClassifyMethod>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_n_test() -> usize {
    1000
}
fn default_ece_bins() -> usize {
    10
}
fn default_grid_resolution() -> usize {
    50
}
fn default_grid_bounds() -> (f64, f64, f64, f64) {
    (-1.5, 2.5, -1.0, 1.5)
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifyMethod {
    Deterministic {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        #[serde(default)]
        train: TrainConfig,
    },
    De {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        ensemble: EnsembleConfig,
    },
    Re {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        ensemble: EnsembleConfig,
    },
    Vi {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        #[serde(default)]
        vi: ViConfig,
        #[serde(default)]
        pretrain: Option<TrainConfig>,
        #[serde(default = "default_predictive_samples")]
        predictive_samples: usize,
    },
    Hmc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        net: NetConfig,
        hmc: HmcConfig,
        #[serde(default = "one")]
        prior_var: f64,
        /// Warm start for the chain.
        #[serde(default)]
        pretrain: Option<TrainConfig>,
        /// Keep every `thin`-th retained draw.
        #[serde(default = "default_thin")]
        thin: usize,
    },
}

fn default_thin() -> usize {
    1
}

impl ClassifyMethod {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifyMethod::Deterministic { .. } => "deterministic",
            ClassifyMethod::De { .. } => "de",
            ClassifyMethod::Re { .. } => "re",
            ClassifyMethod::Vi { .. } => "vi",
            ClassifyMethod::Hmc { .. } => "hmc",
        }
    }

    pub fn label(&self) -> String {
        let label = match self {
            ClassifyMethod::Deterministic { label, .. }
            | ClassifyMethod::De { label, .. }
            | ClassifyMethod::Re { label, .. }
            | ClassifyMethod::Vi { label, .. }
            | ClassifyMethod::Hmc { label, .. } => label,
        };
        label.clone().unwrap_or_else(|| self.kind().into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureConfig {
    #[serde(default = "default_closure_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_closure_points")]
    pub n_points: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Quoted covariance is this multiple of the true one.
    #[serde(default = "one")]
    pub sigma_scale: f64,
    #[serde(default = "default_closure_noise")]
    pub noise_std: f64,
    /// Neighbour correlation `rho^|i-j|` of the data covariance.
    #[serde(default = "default_correlation")]
    pub correlation: f64,
    #[serde(default)]
    pub estimator: ClosureEstimator,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_closure_seeds() -> Vec<u64> {
    vec![0]
}
fn default_closure_points() -> usize {
    20
}
fn default_replicas() -> usize {
    500
}
fn default_closure_noise() -> f64 {
    0.3
}
fn default_correlation() -> f64 {
    0.5
}

impl Default for ClosureConfig {
    fn default() -> Self {
        Self {
            seeds: default_closure_seeds(),
            n_points: default_closure_points(),
            replicas: default_replicas(),
            sigma_scale: 1.0,
            noise_std: default_closure_noise(),
            correlation: default_correlation(),
            estimator: ClosureEstimator::default(),
            output_dir: None,
        }
    }
}

/// Generalised least squares under a known design matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "design", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosureEstimator {
    /// One parameter per data point.
    #[default]
    Identity,
    /// Polynomial in the point location of the given degree.
    Polynomial { degree: usize },
}

impl ClosureEstimator {
    pub fn label(&self) -> &'static str {
        match self {
            ClosureEstimator::Identity => "identity",
            ClosureEstimator::Polynomial { .. } => "polynomial",
        }
    }
}
