use serde::Serialize;

use super::config::{ClassifyConfig, ClassifyMethod};
use super::svg::{Heatmap, Plot};
use super::{data_stream, mean_sample_std, method_stream, MethodFailure, OutDir, RunOptions, Stopwatch, SuiteOutcome, Written};
use crate::datasets::{make_two_moons, MoonsConfig};
use crate::diagnostics::{brier_binary, entropy_decomposition, reliability, BinningMode};
use crate::ensemble::{train_deep_ensemble, train_map, train_repulsive_ensemble};
use crate::error::{Result, UqError};
use crate::infer::{
    class_probabilities, hmc_sample, train_vi, GaussianPriorPosterior, MlpLikelihood, PosteriorSamples, SampleSource,
};
use crate::nn::{Data, LossKind, MlpSpec};
use crate::rng::RngStream;

const CLASSES: usize = 2;

pub(crate) struct ClassFit {
    pub spec: MlpSpec,
    pub samples: PosteriorSamples,
    pub acceptance_rate: Option<f64>,
}

impl ClassFit {
    /// Member probabilities at `x`, one row per member.
    pub fn member_probs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        class_probabilities(&self.samples, &self.spec, x)
    }

    pub fn predictive(&self, x: &[f64]) -> Result<Vec<f64>> {
        let members = self.member_probs(x)?;
        let k = members.len() as f64;
        Ok((0..CLASSES).map(|c| members.iter().map(|p| p[c]).sum::<f64>() / k).collect())
    }
}

pub(crate) fn fit_method(method: &ClassifyMethod, train: &Data, rng: &RngStream) -> Result<ClassFit> {
    let kind = LossKind::CategoricalNll;
    let mut acceptance_rate = None;
    let (spec, samples) = match method {
        ClassifyMethod::Deterministic { net, train: tc, .. } => {
            let spec = net.spec(2, CLASSES);
            let theta = train_map(&spec, train, kind, &tc.as_ensemble(), &rng.split(2))?;
            let samples = PosteriorSamples::new(vec![theta], SampleSource::Ensemble)?;
            (spec, samples)
        }
        ClassifyMethod::De { net, ensemble, .. } => {
            let spec = net.spec(2, CLASSES);
            let samples = train_deep_ensemble(&spec, train, kind, ensemble, &rng.split(2))?;
            (spec, samples)
        }
        ClassifyMethod::Re { net, ensemble, .. } => {
            let spec = net.spec(2, CLASSES);
            let fit = train_repulsive_ensemble(&spec, train, kind, ensemble, &rng.split(2))?;
            (spec, fit.samples)
        }
        ClassifyMethod::Vi {
            net,
            vi,
            pretrain,
            predictive_samples,
            ..
        } => {
            let spec = net.spec(2, CLASSES);
            let init = match pretrain {
                Some(t) => train_map(&spec, train, kind, &t.as_ensemble(), &rng.split(1))?,
                None => spec.init(&mut rng.split(1)),
            };
            let model = MlpLikelihood {
                spec: &spec,
                data: train,
                kind,
            };
            let q = train_vi(&model, init, vi, &mut rng.split(2))?;
            let samples = q.samples(*predictive_samples, &mut rng.split(3))?;
            (spec, samples)
        }
        ClassifyMethod::Hmc {
            net,
            hmc,
            prior_var,
            pretrain,
            thin,
            ..
        } => {
            let spec = net.spec(2, CLASSES);
            let init = match pretrain {
                Some(t) => train_map(&spec, train, kind, &t.as_ensemble(), &rng.split(1))?,
                None => spec.init(&mut rng.split(1)),
            };
            let potential = GaussianPriorPosterior {
                likelihood: MlpLikelihood {
                    spec: &spec,
                    data: train,
                    kind,
                },
                prior_var: *prior_var,
            };
            let out = hmc_sample(&potential, &init, hmc, &mut rng.split(2))?;
            acceptance_rate = Some(out.acceptance_rate);
            let thetas = out.samples.thetas.into_iter().step_by((*thin).max(1)).collect();
            (spec, PosteriorSamples::new(thetas, SampleSource::Hmc)?)
        }
    };
    Ok(ClassFit {
        spec,
        samples,
        acceptance_rate,
    })
}

/// Extremes of the uncertainty maps.
#[derive(Clone, Copy, Debug, Serialize)]
pub(crate) struct MapChecks {
    pub min_probability: f64,
    pub max_probability: f64,
    pub max_total_entropy: f64,
    pub max_expected_entropy: f64,
    pub min_mutual_information: f64,
    /// Largest `|total - expected - mi|`.
    pub max_decomposition_residual: f64,
}

impl MapChecks {
    fn merge(self, o: MapChecks) -> MapChecks {
        MapChecks {
            min_probability: self.min_probability.min(o.min_probability),
            max_probability: self.max_probability.max(o.max_probability),
            max_total_entropy: self.max_total_entropy.max(o.max_total_entropy),
            max_expected_entropy: self.max_expected_entropy.max(o.max_expected_entropy),
            min_mutual_information: self.min_mutual_information.min(o.min_mutual_information),
            max_decomposition_residual: self.max_decomposition_residual.max(o.max_decomposition_residual),
        }
    }
}

struct CellResult {
    brier: f64,
    ece: f64,
    acceptance_rate: Option<f64>,
    maps: Option<MapChecks>,
    written: Written,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ClassifyConfig,
    method: &ClassifyMethod,
    train: &Data,
    test: &Data,
    seed: u64,
    write_maps: bool,
    opts: &RunOptions,
    out: &OutDir,
) -> Result<CellResult> {
    let label = method.label();
    let fit = fit_method(method, train, &method_stream(opts.root_seed, seed, &label))?;
    let labels = test.labels();
    let probs: Vec<Vec<f64>> = test.xs.iter().map(|x| fit.predictive(x)).collect::<Result<_>>()?;
    let p1: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let brier = brier_binary(&p1, &labels)?;
    let bins = reliability(&probs, &labels, cfg.ece_bins, BinningMode::AdaptiveQuantile)?;
    let ece = bins.ece();

    let mut written = Written::default();
    let owner = (Some(label.as_str()), Some(seed));
    let dir = format!("{label}/seed_{seed}");
    out.csv(
        &mut written,
        owner,
        &format!("{dir}/reliability.csv"),
        &["bin", "count", "acc", "conf"],
        bins.bins.iter().enumerate().map(|(i, b)| (i, b.count, b.acc, b.conf)),
    )?;

    let maps = if write_maps {
        let (x_lo, x_hi, y_lo, y_hi) = cfg.grid_bounds;
        let r = cfg.grid_resolution.max(1);
        let mut rows = Vec::with_capacity(r * r);
        let mut checks: Option<MapChecks> = None;
        for j in 0..r {
            let y = y_lo + (y_hi - y_lo) * (j as f64 + 0.5) / r as f64;
            for i in 0..r {
                let x = x_lo + (x_hi - x_lo) * (i as f64 + 0.5) / r as f64;
                let members = fit.member_probs(&[x, y])?;
                let d = entropy_decomposition(&members)?;
                let p = members.iter().map(|m| m[1]).sum::<f64>() / members.len() as f64;
                let c = MapChecks {
                    min_probability: p,
                    max_probability: p,
                    max_total_entropy: d.total,
                    max_expected_entropy: d.expected,
                    min_mutual_information: d.mutual_information,
                    max_decomposition_residual: (d.total - d.expected - d.mutual_information).abs(),
                };
                checks = Some(checks.map_or(c, |a| a.merge(c)));
                rows.push((x, y, p, d.total, d.expected, d.mutual_information));
            }
        }
        out.csv(
            &mut written,
            owner,
            &format!("{dir}/grid.csv"),
            &["x1", "x2", "probability", "total_entropy", "expected_entropy", "mutual_information"],
            rows.iter().copied(),
        )?;
        let ln2 = std::f64::consts::LN_2;
        type Row = (f64, f64, f64, f64, f64, f64);
        type Layer = (&'static str, &'static str, f64, fn(&Row) -> f64);
        let layers: [Layer; 4] = [
            ("probability", "probability of class 1", 1.0, |r| r.2),
            ("total_entropy", "predictive entropy", ln2, |r| r.3),
            ("expected_entropy", "expected entropy (aleatoric)", ln2, |r| r.4),
            ("mutual_information", "mutual information (epistemic)", ln2, |r| r.5),
        ];
        for (file, title, vmax, get) in layers {
            out.svg(
                &mut written,
                owner,
                &format!("{dir}/{file}.svg"),
                &Plot::Heatmap(Heatmap {
                    title: format!("{label}, seed {seed}: {title}"),
                    x_range: (x_lo, x_hi),
                    y_range: (y_lo, y_hi),
                    nx: r,
                    ny: r,
                    values: rows.iter().map(get).collect(),
                    value_range: (0.0, vmax),
                }),
            )?;
        }
        checks
    } else {
        None
    };
    Ok(CellResult {
        brier,
        ece,
        acceptance_rate: fit.acceptance_rate,
        maps,
        written,
    })
}

#[derive(Serialize)]
pub(crate) struct MethodMetrics {
    pub method: String,
    pub seeds_ok: usize,
    pub brier_mean: Option<f64>,
    pub brier_std: Option<f64>,
    pub ece_mean: Option<f64>,
    pub ece_std: Option<f64>,
    pub brier: Vec<f64>,
    pub ece: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    pub maps: Option<MapChecks>,
}

#[derive(Serialize)]
struct ClassifyMetrics {
    suite: &'static str,
    seeds: Vec<u64>,
    n_test: usize,
    ece_bins: usize,
    methods: Vec<MethodMetrics>,
}

/// Training set (box removed) and held-out set (full distribution) of one seed.
pub(crate) fn moons_for_seed(cfg: &ClassifyConfig, root_seed: u64, seed: u64) -> Result<(Data, Data)> {
    let test_cfg = MoonsConfig {
        n: cfg.n_test,
        noise: cfg.data.noise,
        excluded_box: None,
    };
    let stream = data_stream(root_seed, seed);
    let train = make_two_moons(&cfg.data, &mut stream.split(0))?.data;
    let test = make_two_moons(&test_cfg, &mut stream.split(1))?.data;
    Ok((train, test))
}

pub(super) fn run(cfg: &ClassifyConfig, opts: &RunOptions, out: &OutDir, clock: &mut Stopwatch) -> Result<SuiteOutcome> {
    if cfg.n_test == 0 || cfg.ece_bins == 0 {
        return Err(UqError::Config("n_test and ece_bins must be positive".into()));
    }
    let datasets: Vec<(Data, Data)> = cfg
        .seeds
        .iter()
        .map(|&s| moons_for_seed(cfg, opts.root_seed, s))
        .collect::<Result<_>>()
        .map_err(|e| UqError::Config(e.to_string()))?;
    clock.lap("generate data");

    let cells: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.seeds.len()).map(move |s| (m, s)))
        .collect();
    let results = super::run_cells(&cells, opts.parallel, |&(m, s)| {
        let write_maps = !cfg.maps_first_seed_only || s == 0;
        let (train, test) = &datasets[s];
        run_cell(cfg, &cfg.methods[m], train, test, cfg.seeds[s], write_maps, opts, out)
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
    for (method, results) in cfg.methods.iter().zip(&per_method) {
        let brier: Vec<f64> = results.iter().map(|r| r.brier).collect();
        let ece: Vec<f64> = results.iter().map(|r| r.ece).collect();
        let stats = |v: &[f64]| (!v.is_empty()).then(|| mean_sample_std(v));
        let (bs, es) = (stats(&brier), stats(&ece));
        let rates: Vec<f64> = results.iter().filter_map(|r| r.acceptance_rate).collect();
        methods.push(MethodMetrics {
            method: method.label(),
            seeds_ok: results.len(),
            brier_mean: bs.map(|s| s.0),
            brier_std: bs.map(|s| s.1),
            ece_mean: es.map(|s| s.0),
            ece_std: es.map(|s| s.1),
            brier,
            ece,
            acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
            maps: results.iter().filter_map(|r| r.maps).reduce(MapChecks::merge),
        });
    }
    out.csv(
        &mut written,
        (None, None),
        "class_diagnostics.csv",
        &["method", "brier_mean", "brier_std", "ece_mean", "ece_std"],
        methods
            .iter()
            .map(|m| (&m.method, m.brier_mean, m.brier_std, m.ece_mean, m.ece_std)),
    )?;
    clock.lap("pool metrics");
    let metrics = ClassifyMetrics {
        suite: "classify",
        seeds: cfg.seeds.clone(),
        n_test: cfg.n_test,
        ece_bins: cfg.ece_bins,
        methods,
    };
    Ok(SuiteOutcome {
        metrics: serde_json::to_value(metrics)?,
        written,
        failures,
    })
}
