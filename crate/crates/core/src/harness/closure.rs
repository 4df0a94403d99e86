use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use super::config::{ClosureConfig, ClosureEstimator};
use super::svg::{LinePlot, Plot, Series};
use super::{mean_se, method_stream, MethodFailure, OutDir, RunOptions, Stopwatch, SuiteOutcome, Written};
use crate::datasets::{make_replicas, regression_target};
use crate::diagnostics::{closure_bias, mean_std};
use crate::error::{Result, UqError};

/// Known linear forward model with its generalised least-squares fit.
pub struct LinearSetup {
    pub design: DMatrix<f64>,
    pub data_cov: DMatrix<f64>,
    pub theta_true: Vec<f64>,
    /// `(F^T Sigma^-1 F)^-1`.
    pub fit_cov: DMatrix<f64>,
    /// Maps data to the GLS estimate.
    gain: DMatrix<f64>,
}

impl LinearSetup {
    pub fn new(cfg: &ClosureConfig) -> Result<Self> {
        let n = cfg.n_points;
        let xs: Vec<f64> = (0..n)
            .map(|i| if n == 1 { 0.0 } else { -3.0 + 6.0 * i as f64 / (n - 1) as f64 })
            .collect();
        let data_cov = DMatrix::from_fn(n, n, |i, j| {
            cfg.noise_std.powi(2) * cfg.correlation.powi((i as i32 - j as i32).abs())
        });
        let data_chol = Cholesky::new(data_cov.clone()).ok_or(UqError::NotPositiveDefinite("closure data covariance"))?;
        let design = match cfg.estimator {
            ClosureEstimator::Identity => DMatrix::identity(n, n),
            ClosureEstimator::Polynomial { degree } => {
                if degree + 1 > n {
                    return Err(UqError::Config(format!(
                        "polynomial degree {degree} needs more than {n} points"
                    )));
                }
                DMatrix::from_fn(n, degree + 1, |i, j| (xs[i] / 3.0).powi(j as i32))
            }
        };
        let sinv_f = data_chol.solve(&design);
        let info = design.transpose() * &sinv_f;
        let info_chol = Cholesky::new(info).ok_or(UqError::NotPositiveDefinite("closure Fisher information"))?;
        let fit_cov = info_chol.inverse();
        let gain = &fit_cov * sinv_f.transpose();
        let truth = DVector::from_iterator(n, xs.iter().map(|&x| regression_target(x)));
        let theta_true = match cfg.estimator {
            ClosureEstimator::Identity => truth.as_slice().to_vec(),
            ClosureEstimator::Polynomial { .. } => (&gain * truth).as_slice().to_vec(),
        };
        Ok(Self {
            design,
            data_cov,
            theta_true,
            fit_cov,
            gain,
        })
    }

    /// Noise-free data `F theta_true`.
    pub fn central_data(&self) -> Vec<f64> {
        (&self.design * DVector::from_column_slice(&self.theta_true)).as_slice().to_vec()
    }

    pub fn fit(&self, y: &[f64]) -> Vec<f64> {
        (&self.gain * DVector::from_column_slice(y)).as_slice().to_vec()
    }
}

#[derive(Serialize)]
struct SeedMetrics {
    seed: u64,
    r_b: f64,
    r_b_se: f64,
    pull_mean: f64,
    pull_std: f64,
}

#[derive(Serialize)]
struct ClosureMetrics {
    suite: &'static str,
    estimator: &'static str,
    n_points: usize,
    n_params: usize,
    replicas: usize,
    sigma_scale: f64,
    r_b: Option<f64>,
    r_b_se: Option<f64>,
    per_seed: Vec<SeedMetrics>,
}

pub(super) fn run(cfg: &ClosureConfig, opts: &RunOptions, out: &OutDir, clock: &mut Stopwatch) -> Result<SuiteOutcome> {
    let setup = LinearSetup::new(cfg)?;
    let quoted = &setup.fit_cov * cfg.sigma_scale;
    let central = setup.central_data();
    let label = cfg.estimator.label();
    let results = super::run_cells(&cfg.seeds, opts.parallel, |&seed| {
        let mut rng = method_stream(opts.root_seed, seed, label);
        let batch = make_replicas(&central, &setup.data_cov, cfg.replicas, &mut rng)?;
        let fits: Vec<Vec<f64>> = batch.replicas.iter().map(|y| setup.fit(y)).collect();
        closure_bias(&fits, &setup.theta_true, &quoted)
    });
    clock.lap("replica fits");

    let mut written = Written::default();
    let mut failures = Vec::new();
    let mut per_seed = Vec::new();
    for (&seed, result) in cfg.seeds.iter().zip(results) {
        let report = match result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("closure seed {seed} failed: {e}");
                failures.push(MethodFailure {
                    method: label.into(),
                    seed,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let dir = format!("{label}/seed_{seed}");
        let owner = (Some(label), Some(seed));
        out.csv(&mut written, owner, &format!("{dir}/closure.csv"), &["k", "B_k"], report.bias.iter().enumerate())?;
        out.csv(&mut written, owner, &format!("{dir}/pulls.csv"), &["index", "pull"], report.pulls.iter().enumerate())?;
        let mut sorted = report.bias.clone();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len() as f64;
        out.svg(
            &mut written,
            owner,
            &format!("{dir}/closure.svg"),
            &Plot::Lines(LinePlot {
                title: format!("replica bias, R_b = {:.3}", report.r_b),
                x_label: "B_k".into(),
                y_label: "empirical CDF".into(),
                lines: vec![Series {
                    label: "B_k".into(),
                    ys: (1..=sorted.len()).map(|i| i as f64 / k).collect(),
                    xs: sorted,
                }],
                ..Default::default()
            }),
        )?;
        let (_, r_b_se) = mean_se(&report.bias);
        let (pull_mean, pull_std) = mean_std(&report.pulls);
        per_seed.push(SeedMetrics {
            seed,
            r_b: report.r_b,
            r_b_se,
            pull_mean,
            pull_std,
        });
    }
    clock.lap("write closure tables");
    let r_bs: Vec<f64> = per_seed.iter().map(|s| s.r_b).collect();
    let (r_b, r_b_se) = if r_bs.is_empty() {
        (None, None)
    } else if r_bs.len() == 1 {
        (Some(r_bs[0]), Some(per_seed[0].r_b_se))
    } else {
        let (m, se) = mean_se(&r_bs);
        (Some(m), Some(se))
    };
    let metrics = ClosureMetrics {
        suite: "closure",
        estimator: label,
        n_points: cfg.n_points,
        n_params: setup.theta_true.len(),
        replicas: cfg.replicas,
        sigma_scale: cfg.sigma_scale,
        r_b,
        r_b_se,
        per_seed,
    };
    Ok(SuiteOutcome {
        metrics: serde_json::to_value(metrics)?,
        written,
        failures,
    })
}
