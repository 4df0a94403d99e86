//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use uqkit::conformal::calibrate_regression;
use uqkit::datasets::{make_regression, regression_target, RegressionDataConfig};
use uqkit::diagnostics::{brier_binary, mean_std, pulls};
use uqkit::gp::{fit_gp, GpHypers};
use uqkit::harness::config::{BvmConfig, ClosureConfig};
use uqkit::harness::{run_experiment, ExperimentConfig, RunOptions};
use uqkit::special::sigmoid;
use uqkit::RngStream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: u64) -> bool {
    elapsed.as_secs_f64() < budget_s as f64
}

fn workspace_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_suite(cfg: &ExperimentConfig, out: &Path) -> (Value, Duration) {
    let start = Instant::now();
    let opts = RunOptions {
        out_dir: out.to_path_buf(),
        root_seed: 0,
        parallel: false,
    };
    let manifest = run_experiment(cfg, &opts).expect("suite runs");
    let elapsed = start.elapsed();
    assert!(manifest.failures.is_empty(), "method failures: {:?}", manifest.failures);
    let text = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    (serde_json::from_str(&text).unwrap(), elapsed)
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

fn method<'a>(metrics: &'a Value, label: &str) -> &'a Value {
    metrics["methods"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["method"] == label)
        .unwrap_or_else(|| panic!("no method {label} in metrics"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let worst = common::fd::all_losses(25);
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|(_, e)| *e < 1e-5) && within(elapsed, 10);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
}

/// Conditions the joint Gaussian of `(y, f*)` with an explicit inverse.
fn brute_force_conditional(h: &GpHypers, xs: &[f64], ys: &[f64], xstar: f64) -> (f64, f64) {
    let n = xs.len();
    let k = |a: f64, b: f64| h.signal_var * (-(a - b).powi(2) / (2.0 * h.lengthscale.powi(2))).exp();
    let joint = DMatrix::from_fn(n + 1, n + 1, |i, j| {
        let a = if i < n { xs[i] } else { xstar };
        let b = if j < n { xs[j] } else { xstar };
        k(a, b) + if i == j && i < n { h.noise_var } else { 0.0 }
    });
    let s11 = joint.view((0, 0), (n, n)).into_owned();
    let s21 = joint.view((n, 0), (1, n)).into_owned();
    let inv = s11.try_inverse().expect("invertible");
    let y = DVector::from_column_slice(ys);
    let mean = (&s21 * &inv * y)[(0, 0)];
    let var = joint[(n, n)] - (&s21 * &inv * s21.transpose())[(0, 0)];
    (mean, var)
}

fn gp_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 1 + rng.next_below(8);
        let h = GpHypers {
            lengthscale: 0.3 + 2.0 * rng.next_uniform(),
            signal_var: 0.2 + 2.0 * rng.next_uniform(),
            noise_var: 0.01 + 0.5 * rng.next_uniform(),
        };
        let xs: Vec<f64> = (0..n).map(|_| 6.0 * rng.next_uniform() - 3.0).collect();
        let ys = rng.normal_vec(n);
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let model = fit_gp(&rows, &ys, h).unwrap();
        for _ in 0..5 {
            let xstar = 8.0 * rng.next_uniform() - 4.0;
            let (m, v) = model.predict(&[xstar], false);
            let (mb, vb) = brute_force_conditional(&h, &xs, &ys, xstar);
            worst = worst
                .max((m - mb).abs() / mb.abs().max(1e-6))
                .max((v - vb).abs() / vb.abs().max(1e-6));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-8 && within(elapsed, 5),
        format!("max relative error {worst:.1e}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn conformal_coverage() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(23);
    let trials = 2000;
    let tests_per_trial = 50;
    let draw = |rng: &mut RngStream, n: usize| -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![6.0 * rng.next_uniform() - 3.0]).collect();
        let ys = xs.iter().map(|x| regression_target(x[0]) + 0.3 * rng.next_normal()).collect();
        (xs, ys)
    };
    let mut results = Vec::new();
    type Model = (&'static str, fn(&[f64]) -> f64);
    let models: [Model; 2] = [
        ("exact model", |x| regression_target(x[0])),
        ("biased model", |x| regression_target(x[0]) + 0.5 + 0.2 * x[0]),
    ];
    for (name, model) in models {
        let mut hits = 0usize;
        for _ in 0..trials {
            let (cx, cy) = draw(&mut rng, 100);
            let cal = calibrate_regression(model, &cx, &cy, 0.1).unwrap();
            let (tx, ty) = draw(&mut rng, tests_per_trial);
            hits += tx.iter().zip(&ty).filter(|(x, y)| cal.regression_interval(model(x)).contains(**y)).count();
        }
        results.push((name, hits as f64 / (trials * tests_per_trial) as f64));
    }
    let elapsed = start.elapsed();
    let pass = results.iter().all(|(_, c)| (0.89..=0.93).contains(c)) && within(elapsed, 30);
    let detail = results.iter().map(|(n, c)| format!("{n} {c:.4}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("{detail}; {:.2}s", elapsed.as_secs_f64()))
}

fn closure(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let cases = [(1.0, 0.9, 1.1), (4.0, 0.2, 0.3), (0.25, 3.5, 4.5)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (scale, lo, hi) in cases {
        let cfg = ExperimentConfig::Closure(ClosureConfig {
            sigma_scale: scale,
            ..Default::default()
        });
        let (m, _) = run_suite(&cfg, &tmp.join(format!("closure_{scale}")));
        let r_b = f(&m["r_b"]);
        pass &= (lo..=hi).contains(&r_b);
        parts.push(format!("scale {scale}: R_b {r_b:.3}"));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 10);
    outcome(pass, format!("{}; {:.2}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn bvm(tmp: &Path) -> Outcome {
    let cfg = ExperimentConfig::Bvm(BvmConfig::default());
    let (m, elapsed) = run_suite(&cfg, &tmp.join("bvm"));
    let tv: Vec<f64> = m["tv_mean"].as_array().unwrap().iter().map(f).collect();
    let decreasing = tv.windows(2).all(|w| w[1] < w[0]);
    let last = *tv.last().unwrap();
    outcome(
        decreasing && last < 0.05 && within(elapsed, 20),
        format!("TV {tv:.4?}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn pull_sanity() -> Outcome {
    let start = Instant::now();
    let cfg = RegressionDataConfig {
        n_train: 10_000,
        ..Default::default()
    };
    let data = make_regression(&cfg, &mut RngStream::new(5)).unwrap();
    let xs = &data.train.xs;
    let means: Vec<f64> = xs.iter().map(|x| regression_target(x[0])).collect();
    let stds = vec![cfg.noise_std; xs.len()];
    let p = pulls(&means, &stds, &data.train.ys).unwrap();
    let (mean, std) = mean_std(&p);
    let elapsed = start.elapsed();
    outcome(
        mean.abs() < 0.03 && (0.97..=1.03).contains(&std) && within(elapsed, 5),
        format!("pull mean {mean:.4}, std {std:.4}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn brier_propriety() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(31);
    let n = 100_000;
    let logits: Vec<f64> = (0..n).map(|_| 2.0 * rng.next_normal()).collect();
    let truth: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let labels: Vec<usize> = truth.iter().map(|&p| usize::from(rng.next_uniform() < p)).collect();
    let best = brier_binary(&truth, &labels).unwrap();
    let mut closest = f64::INFINITY;
    let mut beaten = 0;
    for _ in 0..50 {
        let shift = 0.3 * rng.next_normal();
        let temperature = (0.5 * rng.next_normal()).exp();
        let jitter = 0.05 + 0.5 * rng.next_uniform();
        let alt: Vec<f64> = logits
            .iter()
            .map(|&z| sigmoid(z * temperature + shift + jitter * rng.next_normal()))
            .collect();
        let score = brier_binary(&alt, &labels).unwrap();
        closest = closest.min(score - best);
        beaten += usize::from(score > best);
    }
    let elapsed = start.elapsed();
    outcome(
        beaten == 50 && within(elapsed, 10),
        format!(
            "truth beats {beaten}/50 alternatives, smallest margin {closest:.2e}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn regression(tmp: &Path) -> (Outcome, Value) {
    let cfg = ExperimentConfig::load(&workspace_config("regress.json")).unwrap();
    let (m, elapsed) = run_suite(&cfg, &tmp.join("regress"));
    let levels: Vec<f64> = m["levels"].as_array().unwrap().iter().map(f).collect();
    let mut pass = within(elapsed, 600);
    let mut parts = Vec::new();
    for label in ["gp", "cp_mlp"] {
        let cov: Vec<f64> = method(&m, label)["in_domain"]["coverage"].as_array().unwrap().iter().map(f).collect();
        let mut worst: f64 = 0.0;
        for target in [0.5, 0.8, 0.9, 0.95] {
            let i = levels.iter().position(|l| (l - target).abs() < 1e-12).expect("level configured");
            worst = worst.max((cov[i] - target).abs());
        }
        pass &= worst <= 0.07;
        parts.push(format!("{label} max coverage gap {worst:.3}"));
    }
    for entry in m["methods"].as_array().unwrap() {
        let inside = f(&entry["in_domain"]["pull_std"]);
        let full = f(&entry["full_domain"]["pull_std"]);
        pass &= full > inside;
        parts.push(format!("{} pull std {inside:.2} -> {full:.2}", entry["method"].as_str().unwrap()));
    }
    (outcome(pass, format!("{}; {:.0}s", parts.join(", "), elapsed.as_secs_f64())), m)
}

fn classification(tmp: &Path) -> (Outcome, Value) {
    let cfg = ExperimentConfig::load(&workspace_config("classify.json")).unwrap();
    let (m, elapsed) = run_suite(&cfg, &tmp.join("classify"));
    let mean = |label: &str, key: &str| f(&method(&m, label)[key]);
    let pairs = [("deterministic", "de"), ("de", "re"), ("deterministic", "vi")];
    let mut violations = Vec::new();
    let mut broken_pairs = 0;
    for (worse, better) in pairs {
        let before = violations.len();
        for key in ["brier_mean", "ece_mean"] {
            if mean(worse, key) < mean(better, key) {
                violations.push(format!("{key} {worse} < {better}"));
            }
        }
        broken_pairs += usize::from(violations.len() > before);
    }
    let det = mean("deterministic", "brier_mean");
    let hmc = mean("hmc", "brier_mean");
    let pass = broken_pairs <= 1 && hmc <= det - 0.005 && within(elapsed, 1800);
    let table = ["deterministic", "de", "re", "vi", "hmc"]
        .iter()
        .map(|l| format!("{l} {:.4}/{:.4}", mean(l, "brier_mean"), mean(l, "ece_mean")))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!(
        "brier/ece {table}; violations {violations:?}; {:.0}s",
        elapsed.as_secs_f64()
    );
    (outcome(pass, detail), m)
}

fn entropy_decomposition(classify: &Value) -> Outcome {
    let mut pass = true;
    let mut worst_residual: f64 = 0.0;
    let mut max_entropy: f64 = 0.0;
    let mut min_mi = f64::INFINITY;
    for entry in classify["methods"].as_array().unwrap() {
        let maps = &entry["maps"];
        if maps.is_null() {
            pass = false;
            continue;
        }
        worst_residual = worst_residual.max(f(&maps["max_decomposition_residual"]));
        max_entropy = max_entropy
            .max(f(&maps["max_total_entropy"]))
            .max(f(&maps["max_expected_entropy"]));
        min_mi = min_mi.min(f(&maps["min_mutual_information"]));
    }
    pass &= worst_residual <= 1e-12 && min_mi >= 0.0 && max_entropy <= LN_2 + 1e-12;
    outcome(
        pass,
        format!("max residual {worst_residual:.1e}, min MI {min_mi:.1e}, max entropy {max_entropy:.6} (ln 2 = {LN_2:.6})"),
    )
}

/// Caps the training lengths so a rerun stays cheap; every method still runs.
fn shrink(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                match (key.as_str(), v.as_u64()) {
                    ("epochs", Some(e)) => *v = Value::from(e.min(100)),
                    ("n_samples", Some(s)) => *v = Value::from(s.min(30)),
                    ("predictive_samples", Some(s)) => *v = Value::from(s.min(20)),
                    _ => shrink(v),
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(shrink),
        _ => {}
    }
}

fn reduced(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(workspace_config(name)).unwrap();
    let mut value: Value = serde_json::from_str(&text).unwrap();
    shrink(&mut value);
    value["seeds"] = Value::from(vec![0, 1]);
    ExperimentConfig::from_json(&value.to_string()).unwrap()
}

fn determinism(tmp: &Path) -> Outcome {
    let suites = [
        ("bvm", ExperimentConfig::Bvm(BvmConfig::default())),
        ("closure", ExperimentConfig::Closure(ClosureConfig::default())),
        ("regress", reduced("regress.json")),
        ("classify", reduced("classify.json")),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, cfg) in suites {
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|run| {
                let dir = tmp.join(format!("determinism_{name}_{run}"));
                run_suite(&cfg, &dir);
                std::fs::read(dir.join("metrics.json")).unwrap()
            })
            .collect();
        let same = bytes[0] == bytes[1];
        pass &= same;
        parts.push(format!("{name} {}", if same { "identical" } else { "differs" }));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    // Accept and ignore the flags cargo test forwards to every target.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, run: &mut dyn FnMut() -> Outcome| {
        if wanted(name) {
            let o = run();
            println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((name, o));
        }
    };
    record("gradients", &mut gradients);
    record("gp_oracle", &mut gp_oracle);
    record("conformal_coverage", &mut conformal_coverage);
    record("closure", &mut || closure(dir));
    record("bvm", &mut || bvm(dir));
    record("pull_sanity", &mut pull_sanity);
    record("brier_propriety", &mut brier_propriety);
    record("regression_suite", &mut || regression(dir).0);
    let mut classify_metrics = None;
    record("classification_suite", &mut || {
        let (o, m) = classification(dir);
        classify_metrics = Some(m);
        o
    });
    record("entropy_decomposition", &mut || match &classify_metrics {
        Some(m) => entropy_decomposition(m),
        None => entropy_decomposition(&classification(dir).1),
    });
    record("determinism", &mut || determinism(dir));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
