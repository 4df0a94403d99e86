//! Central finite-difference checks of every trainable loss.

use uqkit::ensemble::{repulsive_loss, BandwidthRule};
use uqkit::evidential::{
    loss_evidential_classification, loss_evidential_regression, DirichletParams, NigParams,
};
use uqkit::infer::{elbo_loss_with_noise, MeanFieldPosterior, MlpLikelihood};
use uqkit::nn::{grad, total_loss, Activation, Data, LossKind, MlpSpec, ParamVector};
use uqkit::RngStream;

pub const STEP: f64 = 1e-5;

/// `max |g - fd| / max(max |g|, 1e-8)` over all coordinates.
pub fn fd_rel_err(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + STEP;
        let up = f(&xp);
        xp[i] = x[i] - STEP;
        let down = f(&xp);
        xp[i] = x[i];
        worst = worst.max((analytic[i] - (up - down) / (2.0 * STEP)).abs());
    }
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-8);
    worst / scale
}

fn random_net(rng: &mut RngStream, out: usize) -> MlpSpec {
    let depth = 1 + rng.next_below(2);
    let widths = (0..depth).map(|_| 2 + rng.next_below(8)).collect();
    let act = if rng.bernoulli(0.5) { Activation::Tanh } else { Activation::Relu };
    MlpSpec::new(1 + rng.next_below(3), widths, out, act).unwrap()
}

fn random_data(rng: &mut RngStream, spec: &MlpSpec, kind: LossKind) -> Data {
    let n = 5 + rng.next_below(10);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(spec.input_dim)).collect();
    let ys = (0..n)
        .map(|_| match kind {
            LossKind::GaussianNll => rng.next_normal(),
            LossKind::CategoricalNll => rng.next_below(spec.output_dim) as f64,
        })
        .collect();
    Data::new(xs, ys)
}

pub fn network_nll(seed: u64, kind: LossKind) -> f64 {
    let mut rng = RngStream::new(seed);
    let out = match kind {
        LossKind::GaussianNll => 2,
        LossKind::CategoricalNll => 2 + rng.next_below(3),
    };
    let spec = random_net(&mut rng, out);
    let data = random_data(&mut rng, &spec, kind);
    let theta = ParamVector::from_vec(rng.normal_vec(spec.n_params()).iter().map(|z| 0.5 * z).collect());
    let (_, g) = grad(&spec, &theta, &data, kind).unwrap();
    let n = data.len() as f64;
    fd_rel_err(theta.as_slice(), g.as_slice(), |t| {
        total_loss(&spec, t, &data, kind, &mut spec.scratch()).unwrap() / n
    })
}

pub fn elbo(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let kind = if rng.bernoulli(0.5) { LossKind::GaussianNll } else { LossKind::CategoricalNll };
    let spec = random_net(&mut rng, 2);
    let data = random_data(&mut rng, &spec, kind);
    let model = MlpLikelihood { spec: &spec, data: &data, kind };
    let d = spec.n_params();
    let q = MeanFieldPosterior {
        mu: rng.normal_vec(d).iter().map(|z| 0.5 * z).collect(),
        rho: (0..d).map(|_| -3.0 + rng.next_uniform()).collect(),
    };
    let eps: Vec<Vec<f64>> = (0..1 + rng.next_below(3)).map(|_| rng.normal_vec(d)).collect();
    let prior_var = 0.5 + rng.next_uniform();
    let e = elbo_loss_with_noise(&q, &model, prior_var, &eps).unwrap();
    let x: Vec<f64> = q.mu.iter().chain(&q.rho).copied().collect();
    let g: Vec<f64> = e.grad_mu.iter().chain(&e.grad_rho).copied().collect();
    fd_rel_err(&x, &g, |x| {
        let q = MeanFieldPosterior {
            mu: x[..d].to_vec(),
            rho: x[d..].to_vec(),
        };
        elbo_loss_with_noise(&q, &model, prior_var, &eps).unwrap().loss
    })
}

/// The hatted copies are held fixed, so member `i`'s gradient is checked
/// against the numerator of its own kernel ratio.
pub fn repulsive(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let k = 2 + rng.next_below(5);
    let dim = 1 + rng.next_below(6);
    let outputs: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(dim)).collect();
    let nlls = rng.normal_vec(k);
    let priors = rng.normal_vec(k);
    let beta = 0.1 + 2.0 * rng.next_uniform();
    let n_total = 10 + rng.next_below(100);
    // Squared distances grow with the dimension; so does a sensible bandwidth.
    let h = (0.5 + 2.0 * rng.next_uniform()) * dim as f64;
    let r = repulsive_loss(&outputs, &nlls, &priors, beta, n_total, BandwidthRule::Fixed(h)).unwrap();
    let kern = |a: &[f64], b: &[f64]| (-a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / h).exp();
    (0..k)
        .map(|i| {
            let denom: f64 = outputs.iter().map(|fj| kern(&outputs[i], fj)).sum();
            fd_rel_err(&outputs[i], &r.grads[i], |f| {
                beta / n_total as f64 * outputs.iter().map(|fj| kern(f, fj)).sum::<f64>() / denom
            })
        })
        .fold(0.0, f64::max)
}

pub fn evidential_regression(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let n = 1 + rng.next_below(8);
    let params: Vec<NigParams> = (0..n)
        .map(|_| {
            NigParams::new(
                rng.next_normal(),
                0.1 + 3.0 * rng.next_uniform(),
                1.1 + 3.0 * rng.next_uniform(),
                0.1 + 3.0 * rng.next_uniform(),
            )
            .unwrap()
        })
        .collect();
    // Keep every residual clear of the kink in |y - gamma|.
    let ys: Vec<f64> = params
        .iter()
        .map(|p| p.gamma + (0.05 + rng.next_uniform()) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
        .collect();
    let lambda = rng.next_uniform();
    let l = loss_evidential_regression(&params, &ys, lambda).unwrap();
    let x: Vec<f64> = params.iter().flat_map(|p| [p.gamma, p.v, p.alpha, p.beta]).collect();
    let g: Vec<f64> = l.grads.iter().flat_map(|g| [g.gamma, g.v, g.alpha, g.beta]).collect();
    fd_rel_err(&x, &g, |x| {
        let ps: Vec<NigParams> = x
            .chunks(4)
            .map(|c| NigParams {
                gamma: c[0],
                v: c[1],
                alpha: c[2],
                beta: c[3],
            })
            .collect();
        loss_evidential_regression(&ps, &ys, lambda).unwrap().loss
    })
}

pub fn evidential_classification(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let n = 1 + rng.next_below(8);
    let c = 2 + rng.next_below(4);
    let alphas: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| 1.0 + 5.0 * rng.next_uniform()).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.next_below(c)).collect();
    let lambda_t = rng.next_uniform();
    let params: Vec<DirichletParams> = alphas.iter().map(|a| DirichletParams { alphas: a.clone() }).collect();
    let l = loss_evidential_classification(&params, &labels, lambda_t).unwrap();
    let x: Vec<f64> = alphas.concat();
    let g: Vec<f64> = l.grads.concat();
    fd_rel_err(&x, &g, |x| {
        let ps: Vec<DirichletParams> = x.chunks(c).map(|a| DirichletParams { alphas: a.to_vec() }).collect();
        loss_evidential_classification(&ps, &labels, lambda_t).unwrap().loss
    })
}

/// Worst relative error of each loss over `configs` random configurations.
pub fn all_losses(configs: u64) -> Vec<(&'static str, f64)> {
    let worst = |f: &dyn Fn(u64) -> f64| (0..configs).map(|s| f(1000 + s)).fold(0.0, f64::max);
    vec![
        ("Gaussian NLL", worst(&|s| network_nll(s, LossKind::GaussianNll))),
        ("categorical NLL", worst(&|s| network_nll(s, LossKind::CategoricalNll))),
        ("ELBO", worst(&elbo)),
        ("repulsive", worst(&repulsive)),
        ("evidential regression", worst(&evidential_regression)),
        ("evidential classification", worst(&evidential_classification)),
    ]
}
