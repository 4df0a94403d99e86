use serde::Serialize;

use super::config::{NetConfig, RegressConfig, RegressMethod, TrainConfig};
use super::svg::{Band, LinePlot, Plot, Series};
use super::{data_stream, mean_se, method_stream, MethodFailure, OutDir, RunOptions, Stopwatch, SuiteOutcome, Written};
use crate::conformal::{absolute_residual_score, ConformalCalibration};
use crate::datasets::{make_regression, regression_target, RegressionDataset, FULL_DOMAIN};
use crate::diagnostics::{coverage_curve, gaussian_mixture_density, log_predictive_density, mean_std, pulls};
use crate::ensemble::{train_deep_ensemble, train_map, train_repulsive_ensemble};
use crate::error::{Result, UqError};
use crate::gp::{select_hypers, GpModel};
use crate::infer::{member_heads, train_vi, MlpLikelihood, PosteriorSamples, PredictiveSummary};
use crate::interval::Interval;
use crate::nn::{Data, LossKind, MlpSpec, ParamVector, RegressionHead};
use crate::rng::RngStream;
use crate::special::std_normal_quantile;

/// Level whose conformal half-width stands in for one standard deviation.
const ONE_SIGMA_LEVEL: f64 = 0.682_689_492_137_085_9;

/// A fitted regression method.
pub(crate) enum Predictor {
    Gp(GpModel),
    /// Posterior samples or ensemble members with Gaussian heads.
    Samples { spec: MlpSpec, samples: PosteriorSamples },
    /// Point network plus sorted absolute calibration residuals.
    Conformal { spec: MlpSpec, theta: ParamVector, scores: Vec<f64> },
}

/// Predictions at one input.
pub(crate) struct PointPrediction {
    pub mean: f64,
    /// Predictive standard deviation, or the conformal one-sigma half-width.
    pub scale: f64,
    members: Vec<(f64, f64)>,
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> Result<PointPrediction> {
        match self {
            Predictor::Gp(model) => {
                let (mean, var) = model.predict(x, true);
                Ok(PointPrediction {
                    mean,
                    scale: var.sqrt(),
                    members: vec![(mean, var)],
                })
            }
            Predictor::Samples { spec, samples } => {
                let members: Vec<(f64, f64)> = member_heads(samples, spec, x)?
                    .iter()
                    .map(|h| (h.mu, h.variance()))
                    .collect();
                let summary = PredictiveSummary::from_members(&members)?;
                Ok(PointPrediction {
                    mean: summary.mean,
                    scale: summary.std(),
                    members,
                })
            }
            Predictor::Conformal { spec, theta, scores } => {
                let mean = RegressionHead::from_outputs(&spec.forward(theta, x)?).mu;
                let scale = conformal_half_width(scores, ONE_SIGMA_LEVEL)?;
                Ok(PointPrediction {
                    mean,
                    scale,
                    members: Vec::new(),
                })
            }
        }
    }

    pub fn interval(&self, p: &PointPrediction, level: f64) -> Result<Interval> {
        match self {
            Predictor::Conformal { scores, .. } => Ok(Interval::centered(p.mean, conformal_half_width(scores, level)?)),
            _ => Ok(Interval::centered(p.mean, std_normal_quantile(0.5 + level / 2.0) * p.scale)),
        }
    }

    /// Predictive density at `y`; conformal prediction has none.
    pub fn density(&self, p: &PointPrediction, y: f64) -> Option<f64> {
        (!p.members.is_empty()).then(|| gaussian_mixture_density(&p.members, y))
    }
}

fn conformal_half_width(scores: &[f64], level: f64) -> Result<f64> {
    Ok(ConformalCalibration::from_scores(scores.to_vec(), 1.0 - level)?.q_hat)
}

fn pretrain_or_init(
    spec: &MlpSpec,
    data: &Data,
    pretrain: Option<&TrainConfig>,
    rng: &RngStream,
) -> Result<ParamVector> {
    match pretrain {
        Some(t) => train_map(spec, data, LossKind::GaussianNll, &t.as_ensemble(), rng),
        None => Ok(spec.init(&mut rng.clone())),
    }
}

fn regression_spec(net: &NetConfig) -> MlpSpec {
    net.spec(1, 2)
}

pub(crate) fn fit_method(method: &RegressMethod, train: &Data, rng: &RngStream) -> Result<Predictor> {
    match method {
        RegressMethod::Gp { grid, .. } => Ok(Predictor::Gp(select_hypers(&train.xs, &train.ys, grid)?)),
        RegressMethod::CpMlp {
            net,
            train: tc,
            calibration_fraction,
            ..
        } => {
            if !(*calibration_fraction > 0.0 && *calibration_fraction < 1.0) {
                return Err(UqError::Config("calibration_fraction must lie in (0, 1)".into()));
            }
            let n = train.len();
            let n_cal = ((n as f64 * calibration_fraction).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            rng.split(0).shuffle(&mut order);
            let (cal_idx, fit_idx) = order.split_at(n_cal);
            let spec = regression_spec(net);
            let theta = train_map(&spec, &train.subset(fit_idx), LossKind::GaussianNll, &tc.as_ensemble(), &rng.split(1))?;
            let cal = train.subset(cal_idx);
            let mut scores = Vec::with_capacity(n_cal);
            for (x, &y) in cal.xs.iter().zip(&cal.ys) {
                let mu = RegressionHead::from_outputs(&spec.forward(&theta, x)?).mu;
                scores.push(absolute_residual_score(y, mu));
            }
            scores.sort_by(f64::total_cmp);
            Ok(Predictor::Conformal { spec, theta, scores })
        }
        RegressMethod::Vi {
            net,
            vi,
            pretrain,
            predictive_samples,
            ..
        } => {
            let spec = regression_spec(net);
            let init = pretrain_or_init(&spec, train, pretrain.as_ref(), &rng.split(1))?;
            let model = MlpLikelihood {
                spec: &spec,
                data: train,
                kind: LossKind::GaussianNll,
            };
            let q = train_vi(&model, init, vi, &mut rng.split(2))?;
            let samples = q.samples(*predictive_samples, &mut rng.split(3))?;
            Ok(Predictor::Samples { spec, samples })
        }
        RegressMethod::De { net, ensemble, .. } => {
            let spec = regression_spec(net);
            let samples = train_deep_ensemble(&spec, train, LossKind::GaussianNll, ensemble, &rng.split(2))?;
            Ok(Predictor::Samples { spec, samples })
        }
        RegressMethod::Re { net, ensemble, .. } => {
            let spec = regression_spec(net);
            let fit = train_repulsive_ensemble(&spec, train, LossKind::GaussianNll, ensemble, &rng.split(2))?;
            if fit.bandwidth_fallbacks > 0 {
                log::debug!("repulsive ensemble used the fallback bandwidth on {} steps", fit.bandwidth_fallbacks);
            }
            Ok(Predictor::Samples {
                spec,
                samples: fit.samples,
            })
        }
    }
}

/// Everything measured on one test set.
pub(crate) struct DomainEval {
    pub hits: Vec<usize>,
    pub n: usize,
    pub pulls: Vec<f64>,
    pub lppd: Option<f64>,
}

pub(crate) fn evaluate(pred: &Predictor, test: &Data, levels: &[f64]) -> Result<DomainEval> {
    let points: Vec<PointPrediction> = test.xs.iter().map(|x| pred.predict(x)).collect::<Result<_>>()?;
    let intervals: Vec<Vec<Interval>> = levels
        .iter()
        .map(|&l| points.iter().map(|p| pred.interval(p, l)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let curve = coverage_curve(levels, &intervals, &test.ys)?;
    let hits = curve
        .empirical_coverage
        .iter()
        .map(|c| (c * test.len() as f64).round() as usize)
        .collect();
    let means: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let scales: Vec<f64> = points.iter().map(|p| p.scale).collect();
    let pulls = pulls(&means, &scales, &test.ys)?;
    let densities: Option<Vec<f64>> = points.iter().zip(&test.ys).map(|(p, &y)| pred.density(p, y)).collect();
    let lppd = match densities {
        Some(d) => Some(log_predictive_density(&d)?.value),
        None => None,
    };
    Ok(DomainEval {
        hits,
        n: test.len(),
        pulls,
        lppd,
    })
}

struct CellResult {
    in_domain: DomainEval,
    full_domain: DomainEval,
    written: Written,
}

fn run_cell(
    cfg: &RegressConfig,
    method: &RegressMethod,
    data: &RegressionDataset,
    seed: u64,
    opts: &RunOptions,
    out: &OutDir,
) -> Result<CellResult> {
    let label = method.label();
    let pred = fit_method(method, &data.train, &method_stream(opts.root_seed, seed, &label))?;
    let in_domain = evaluate(&pred, &data.test_in_domain, &cfg.levels)?;
    let full_domain = evaluate(&pred, &data.test_full_domain(), &cfg.levels)?;

    let mut written = Written::default();
    let owner = (Some(label.as_str()), Some(seed));
    let dir = format!("{label}/seed_{seed}");
    for (name, eval) in [("in_domain", &in_domain), ("full_domain", &full_domain)] {
        out.csv(
            &mut written,
            owner,
            &format!("{dir}/{name}/coverage.csv"),
            &["level", "empirical"],
            cfg.levels.iter().zip(&eval.hits).map(|(l, h)| (*l, *h as f64 / eval.n as f64)),
        )?;
        out.csv(
            &mut written,
            owner,
            &format!("{dir}/{name}/pulls.csv"),
            &["index", "pull"],
            eval.pulls.iter().enumerate(),
        )?;
    }

    let (lo, hi) = FULL_DOMAIN;
    let m = cfg.band_points.max(2);
    let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let mut rows = Vec::with_capacity(m);
    for &x in &grid {
        let p = pred.predict(&[x])?;
        let iv = pred.interval(&p, cfg.band_level)?;
        rows.push((x, regression_target(x), p.mean, iv.lo, iv.hi));
    }
    out.csv(
        &mut written,
        owner,
        &format!("{dir}/bands.csv"),
        &["x", "truth", "mean", "lo", "hi"],
        rows.iter().copied(),
    )?;
    let finite = |v: f64| if v.is_finite() { v } else { f64::NAN };
    out.svg(
        &mut written,
        owner,
        &format!("{dir}/bands.svg"),
        &Plot::Lines(LinePlot {
            title: format!("{label}, seed {seed}: {:.0}% band", 100.0 * cfg.band_level),
            x_label: "x".into(),
            y_label: "y".into(),
            bands: vec![Band {
                label: "band".into(),
                xs: grid.clone(),
                lo: rows.iter().map(|r| finite(r.3)).collect(),
                hi: rows.iter().map(|r| finite(r.4)).collect(),
            }],
            lines: vec![
                Series {
                    label: "mean".into(),
                    xs: grid.clone(),
                    ys: rows.iter().map(|r| r.2).collect(),
                },
                Series {
                    label: "truth".into(),
                    xs: grid,
                    ys: rows.iter().map(|r| r.1).collect(),
                },
            ],
            scatter: vec![Series {
                label: "train".into(),
                xs: data.train.xs.iter().map(|x| x[0]).collect(),
                ys: data.train.ys.clone(),
            }],
        }),
    )?;
    Ok(CellResult {
        in_domain,
        full_domain,
        written,
    })
}

#[derive(Serialize, Default)]
pub(crate) struct DomainMetrics {
    /// Pooled over seeds.
    pub coverage: Vec<f64>,
    /// Standard error of the per-seed coverage.
    pub coverage_se: Vec<f64>,
    pub pull_mean: f64,
    pub pull_std: f64,
    pub lppd: Option<f64>,
    pub lppd_se: Option<f64>,
}

#[derive(Serialize)]
pub(crate) struct MethodMetrics {
    pub method: String,
    pub seeds_ok: usize,
    pub in_domain: Option<DomainMetrics>,
    pub full_domain: Option<DomainMetrics>,
}

#[derive(Serialize)]
struct RegressMetrics {
    suite: &'static str,
    seeds: Vec<u64>,
    levels: Vec<f64>,
    methods: Vec<MethodMetrics>,
}

fn pool(evals: &[&DomainEval], n_levels: usize) -> DomainMetrics {
    let mut coverage = Vec::with_capacity(n_levels);
    let mut coverage_se = Vec::with_capacity(n_levels);
    for l in 0..n_levels {
        let hits: usize = evals.iter().map(|e| e.hits[l]).sum();
        let total: usize = evals.iter().map(|e| e.n).sum();
        coverage.push(hits as f64 / total as f64);
        let per_seed: Vec<f64> = evals.iter().map(|e| e.hits[l] as f64 / e.n as f64).collect();
        coverage_se.push(mean_se(&per_seed).1);
    }
    let all_pulls: Vec<f64> = evals.iter().flat_map(|e| e.pulls.iter().copied()).collect();
    let (pull_mean, pull_std) = mean_std(&all_pulls);
    let lppds: Option<Vec<f64>> = evals.iter().map(|e| e.lppd).collect();
    let (lppd, lppd_se) = match lppds {
        Some(v) => {
            let (m, se) = mean_se(&v);
            (Some(m), Some(se))
        }
        None => (None, None),
    };
    DomainMetrics {
        coverage,
        coverage_se,
        pull_mean,
        pull_std,
        lppd,
        lppd_se,
    }
}

pub(super) fn run(cfg: &RegressConfig, opts: &RunOptions, out: &OutDir, clock: &mut Stopwatch) -> Result<SuiteOutcome> {
    if cfg.levels.iter().chain([&cfg.band_level]).any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(UqError::Config("coverage levels must lie in (0, 1)".into()));
    }
    let datasets: Vec<RegressionDataset> = cfg
        .seeds
        .iter()
        .map(|&s| make_regression(&cfg.data, &mut data_stream(opts.root_seed, s)))
        .collect::<Result<_>>()
        .map_err(|e| UqError::Config(e.to_string()))?;
    clock.lap("generate data");

    let cells: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.seeds.len()).map(move |s| (m, s)))
        .collect();
    let results = super::run_cells(&cells, opts.parallel, |&(m, s)| {
        run_cell(cfg, &cfg.methods[m], &datasets[s], cfg.seeds[s], opts, out)
    });
    clock.lap("fit and evaluate");

    let mut written = Written::default();
    let mut failures = Vec::new();
    let mut per_method: Vec<Vec<CellResult>> = (0..cfg.methods.len()).map(|_| Vec::new()).collect();
    for (&(m, s), result) in cells.iter().zip(results) {
        match result {
            Ok(mut r) => {
                written.files.append(&mut r.written.files);
                per_method[m].push(r);
            }
            Err(e @ (UqError::Io(_) | UqError::Csv(_) | UqError::Json(_))) => return Err(e),
            Err(e) => {
                let method = cfg.methods[m].label();
                log::warn!("{method} failed on seed {}: {e}", cfg.seeds[s]);
                failures.push(MethodFailure {
                    method,
                    seed: cfg.seeds[s],
                    error: e.to_string(),
                });
            }
        }
    }

    let mut methods = Vec::new();
    let mut curves = [Vec::new(), Vec::new()];
    for (method, results) in cfg.methods.iter().zip(&per_method) {
        let label = method.label();
        let (in_domain, full_domain) = if results.is_empty() {
            (None, None)
        } else {
            let ind: Vec<&DomainEval> = results.iter().map(|r| &r.in_domain).collect();
            let full: Vec<&DomainEval> = results.iter().map(|r| &r.full_domain).collect();
            let (a, b) = (pool(&ind, cfg.levels.len()), pool(&full, cfg.levels.len()));
            curves[0].push(Series {
                label: label.clone(),
                xs: cfg.levels.clone(),
                ys: a.coverage.clone(),
            });
            curves[1].push(Series {
                label: label.clone(),
                xs: cfg.levels.clone(),
                ys: b.coverage.clone(),
            });
            (Some(a), Some(b))
        };
        methods.push(MethodMetrics {
            method: label,
            seeds_ok: results.len(),
            in_domain,
            full_domain,
        });
    }
    for (name, series) in ["in_domain", "full_domain"].iter().zip(curves) {
        if series.is_empty() {
            continue;
        }
        let mut lines = vec![Series {
            label: "nominal".into(),
            xs: vec![0.0, 1.0],
            ys: vec![0.0, 1.0],
        }];
        lines.extend(series);
        out.svg(
            &mut written,
            (None, None),
            &format!("coverage_{name}.svg"),
            &Plot::Lines(LinePlot {
                title: format!("pooled coverage, {}", name.replace('_', " ")),
                x_label: "nominal level".into(),
                y_label: "empirical coverage".into(),
                lines,
                ..Default::default()
            }),
        )?;
    }
    clock.lap("pool metrics");
    let metrics = RegressMetrics {
        suite: "regress",
        seeds: cfg.seeds.clone(),
        levels: cfg.levels.clone(),
        methods,
    };
    Ok(SuiteOutcome {
        metrics: serde_json::to_value(metrics)?,
        written,
        failures,
    })
}
