use serde::Serialize;

use super::config::BvmConfig;
use super::svg::{LinePlot, Plot, Series};
use super::{mean_se, method_stream, OutDir, RunOptions, Stopwatch, SuiteOutcome, Written};
use crate::conjugate::{beta_update, bvm_normal_approx, total_variation_unit_interval, BernoulliData, BetaPosterior};
use crate::error::Result;
use crate::rng::RngStream;

#[derive(Serialize)]
struct BvmMetrics {
    suite: &'static str,
    p: f64,
    prior: (f64, f64),
    ns: Vec<u64>,
    seeds: usize,
    tv_mean: Vec<f64>,
    tv_se: Vec<f64>,
}

fn draw(n: u64, p: f64, rng: &mut RngStream) -> Result<BernoulliData> {
    let k = (0..n).filter(|_| rng.bernoulli(p)).count() as u64;
    BernoulliData::new(n, k)
}

pub(super) fn run(cfg: &BvmConfig, opts: &RunOptions, out: &OutDir, clock: &mut Stopwatch) -> Result<SuiteOutcome> {
    let prior = BetaPosterior::new(cfg.prior.0, cfg.prior.1)?;
    let mut written = Written::default();
    let mut tv_mean = Vec::new();
    let mut tv_se = Vec::new();
    for &n in &cfg.ns {
        let tvs = super::run_cells(&cfg.seeds, opts.parallel, |&seed| -> Result<(f64, BernoulliData)> {
            let data = draw(n, cfg.p, &mut method_stream(opts.root_seed, seed, "bvm").split(n))?;
            let post = beta_update(prior, data);
            let approx = bvm_normal_approx(data, cfg.p)?;
            let tv = total_variation_unit_interval(|t| post.pdf(t), |t| approx.pdf(t), cfg.density_points);
            Ok((tv, data))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = tvs.iter().map(|t| t.0).collect();
        let (m, se) = mean_se(&values);
        tv_mean.push(m);
        tv_se.push(se);

        // Densities of the first seed on a window around the posterior mass.
        let data = tvs[0].1;
        let post = beta_update(prior, data);
        let approx = bvm_normal_approx(data, cfg.p)?;
        let sd = (post.a * post.b / ((post.a + post.b).powi(2) * (post.a + post.b + 1.0))).sqrt();
        let lo = (post.mean() - 8.0 * sd).max(0.0);
        let hi = (post.mean() + 8.0 * sd).min(1.0);
        let rows: Vec<(f64, f64, f64)> = (0..=400)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / 400.0;
                (t, post.pdf(t), approx.pdf(t))
            })
            .collect();
        let seed = Some(cfg.seeds[0]);
        out.csv(
            &mut written,
            (None, seed),
            &format!("densities_n{n}.csv"),
            &["theta", "posterior", "approx"],
            rows.iter().copied(),
        )?;
        out.svg(
            &mut written,
            (None, seed),
            &format!("densities_n{n}.svg"),
            &Plot::Lines(LinePlot {
                title: format!("posterior and normal approximation, N = {n}"),
                x_label: "theta".into(),
                y_label: "density".into(),
                lines: vec![
                    Series {
                        label: "Beta posterior".into(),
                        xs: rows.iter().map(|r| r.0).collect(),
                        ys: rows.iter().map(|r| r.1).collect(),
                    },
                    Series {
                        label: "normal".into(),
                        xs: rows.iter().map(|r| r.0).collect(),
                        ys: rows.iter().map(|r| r.2).collect(),
                    },
                ],
                ..Default::default()
            }),
        )?;
        clock.lap(format!("N = {n}"));
    }
    out.csv(
        &mut written,
        (None, None),
        "tv.csv",
        &["n", "tv_mean", "tv_se"],
        cfg.ns.iter().zip(&tv_mean).zip(&tv_se).map(|((n, m), s)| (*n, *m, *s)),
    )?;
    out.svg(
        &mut written,
        (None, None),
        "tv.svg",
        &Plot::Lines(LinePlot {
            title: "total variation distance".into(),
            x_label: "log10 N".into(),
            y_label: "TV".into(),
            lines: vec![Series {
                label: "mean over seeds".into(),
                xs: cfg.ns.iter().map(|n| (*n as f64).log10()).collect(),
                ys: tv_mean.clone(),
            }],
            ..Default::default()
        }),
    )?;
    let metrics = BvmMetrics {
        suite: "bvm",
        p: cfg.p,
        prior: cfg.prior,
        ns: cfg.ns.clone(),
        seeds: cfg.seeds.len(),
        tv_mean,
        tv_se,
    };
    Ok(SuiteOutcome {
        metrics: serde_json::to_value(metrics)?,
        written,
        failures: Vec::new(),
    })
}
