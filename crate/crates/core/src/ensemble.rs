//! Deep ensembles and function-space repulsive ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::infer::{PosteriorSamples, SampleSource};
use crate::nn::{ClassHead, Data, LossKind, MlpSpec, ParamVector, Scratch};
use crate::optim::Adam;
use crate::rng::RngStream;

/// Consecutive non-finite steps tolerated before a member is declared diverged.
const MAX_NONFINITE_STEPS: usize = 10;

/// Child index of the stream that drives mini-batch order. Member `i`
/// initialises from child `i`, so this sits far above any realistic `K`.
const BATCH_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    /// Repulsion strength; only read by repulsive training.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    #[serde(default = "default_prior_var")]
    pub prior_var: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub epochs: usize,
    /// Full batch when absent.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// When set, the step size decays geometrically from `lr` to this value.
    #[serde(default)]
    pub lr_final: Option<f64>,
}

fn default_beta() -> f64 {
    1.0
}
fn default_prior_var() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.01
}

impl EnsembleConfig {
    pub fn new(members: usize, epochs: usize) -> Self {
        Self {
            members,
            beta: default_beta(),
            bandwidth: BandwidthRule::default(),
            prior_var: default_prior_var(),
            lr: default_lr(),
            epochs,
            batch_size: None,
            lr_final: None,
        }
    }

    fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.lr_final {
            Some(end) if total_steps > 0 => self.lr * (end / self.lr).powf(step as f64 / total_steps as f64),
            _ => self.lr,
        }
    }
}

/// Mini-batch index lists for every optimisation step, in order.
fn batch_schedule(n: usize, batch_size: Option<usize>, epochs: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    match batch_size {
        Some(b) if b < n => {
            let mut steps = Vec::with_capacity(epochs * n.div_ceil(b));
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..epochs {
                rng.shuffle(&mut order);
                steps.extend(order.chunks(b).map(<[usize]>::to_vec));
            }
            steps
        }
        _ => vec![(0..n).collect(); epochs],
    }
}

/// Gradient of `mean_b NLL + |theta|^2 / (2 prior_var N)` on one batch, plus
/// an optional function-space term supplied per batch point as a raw-output
/// cotangent. Returns the regularised batch loss.
fn member_gradient(
    spec: &MlpSpec,
    theta: &[f64],
    data: &Data,
    batch: &[usize],
    kind: LossKind,
    prior_var: f64,
    extra: Option<&[Vec<f64>]>,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let inv_b = 1.0 / batch.len() as f64;
    let mut d_out = vec![0.0; spec.output_dim];
    let mut nll = 0.0;
    for (b, &i) in batch.iter().enumerate() {
        let out = spec.forward_with(theta, &data.xs[i], scratch);
        nll += kind.eval(out, data.ys[i], &mut d_out)?;
        d_out.iter_mut().for_each(|d| *d *= inv_b);
        if let Some(extra) = extra {
            for (d, e) in d_out.iter_mut().zip(&extra[b]) {
                *d += e;
            }
        }
        spec.backward_with(theta, scratch, &d_out, grad);
    }
    let scale = 1.0 / (prior_var * data.len() as f64);
    let mut sq = 0.0;
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += scale * t;
        sq += t * t;
    }
    let loss = nll * inv_b + 0.5 * scale * sq;
    if !loss.is_finite() {
        return Err(UqError::NonFinite("member loss"));
    }
    Ok(loss)
}

fn validate(spec: &MlpSpec, data: &Data, cfg: &EnsembleConfig) -> Result<()> {
    spec.validate()?;
    if data.is_empty() {
        return Err(UqError::EmptyInput("ensemble training data"));
    }
    if cfg.members == 0 {
        return Err(UqError::InvalidArgument("an ensemble needs at least one member".into()));
    }
    if !(cfg.prior_var > 0.0) || !(cfg.lr > 0.0) || cfg.batch_size == Some(0) {
        return Err(UqError::InvalidArgument(
            "prior_var and lr must be positive and batch_size nonzero".into(),
        ));
    }
    Ok(())
}

/// Adam on one member with the weight-decay prior. The deterministic network
/// of the benchmarks is this with a single member.
fn train_member(
    spec: &MlpSpec,
    data: &Data,
    kind: LossKind,
    cfg: &EnsembleConfig,
    mut theta: ParamVector,
    schedule: &[Vec<usize>],
) -> Result<ParamVector> {
    let mut opt = Adam::new(theta.len(), cfg.lr);
    let mut grad = vec![0.0; theta.len()];
    let mut scratch = spec.scratch();
    let mut bad_steps = 0;
    for (step, batch) in schedule.iter().enumerate() {
        opt.lr = cfg.lr_at(step, schedule.len());
        match member_gradient(spec, theta.as_slice(), data, batch, kind, cfg.prior_var, None, &mut grad, &mut scratch) {
            Ok(_) if grad.iter().all(|g| g.is_finite()) => {
                bad_steps = 0;
                opt.step(theta.as_mut_slice(), &grad);
            }
            Ok(_) | Err(UqError::NonFinite(_)) => {
                bad_steps += 1;
                if bad_steps >= MAX_NONFINITE_STEPS {
                    return Err(UqError::Diverged {
                        steps: step + 1,
                        context: "ensemble member".into(),
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(theta)
}

/// Single regularised network trained from child stream 0 of `rng`.
pub fn train_map(
    spec: &MlpSpec,
    data: &Data,
    kind: LossKind,
    cfg: &EnsembleConfig,
    rng: &RngStream,
) -> Result<ParamVector> {
    let mut single = cfg.clone();
    single.members = 1;
    let samples = train_deep_ensemble(spec, data, kind, &single, rng)?;
    Ok(samples.thetas.into_iter().next().expect("one member"))
}

/// `K` independently initialised members. Member `i` draws its
/// initialisation from `rng.split(i)`; all members share one batch order.
pub fn train_deep_ensemble(
    spec: &MlpSpec,
    data: &Data,
    kind: LossKind,
    cfg: &EnsembleConfig,
    rng: &RngStream,
) -> Result<PosteriorSamples> {
    validate(spec, data, cfg)?;
    let schedule = batch_schedule(data.len(), cfg.batch_size, cfg.epochs, &mut rng.split(BATCH_STREAM));
    let thetas = (0..cfg.members)
        .into_par_iter()
        .map(|i| {
            let init = spec.init(&mut rng.split(i as u64));
            train_member(spec, data, kind, cfg, init, &schedule).map_err(|e| UqError::MemberFailed {
                member: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PosteriorSamples::new(thetas, SampleSource::Ensemble)
}

/// `median / ln K` of the pairwise squared distances, falling back to 1.0
/// when the median is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidth {
    /// Squared bandwidth `h` of the kernel `exp(-|a - b|^2 / h)`.
    pub h: f64,
    pub fallback: bool,
}

pub fn median_heuristic_bandwidth(pairwise_sq_dists: &[f64], k: usize) -> Result<Bandwidth> {
    if k < 2 {
        return Err(UqError::InvalidArgument("median heuristic needs K >= 2".into()));
    }
    if pairwise_sq_dists.is_empty() {
        return Err(UqError::EmptyInput("pairwise distances"));
    }
    let mut d = pairwise_sq_dists.to_vec();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if !(median > 0.0) || !median.is_finite() {
        log::warn!("median pairwise distance is {median}; using bandwidth 1.0");
        return Ok(Bandwidth { h: 1.0, fallback: true });
    }
    Ok(Bandwidth {
        h: median / (k as f64).ln(),
        fallback: false,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Value of the repulsive objective and the function-space cotangents of
/// its repulsion term.
#[derive(Clone, Debug)]
pub struct RepulsiveLoss {
    /// `(1/K) sum_i [nll_i + (beta/N) ratio_i - (1/N) log p(theta_i)]`.
    pub loss: f64,
    /// Kernel ratio of each member; 1 at a symmetric configuration.
    pub ratios: Vec<f64>,
    /// Gradient of member `i`'s repulsion term `(beta/N) ratio_i` with
    /// respect to its own function values `f_i`.
    pub grads: Vec<Vec<f64>>,
    pub bandwidth: Bandwidth,
}

/// Repulsive ensemble objective on one batch.
///
/// `member_outputs[i]` holds member `i`'s function values on the batch,
/// `member_nlls[i]` its mean batch NLL and `log_priors[i]` its log prior
/// density. Kernel sums run over all `j` including `j = i`; the hatted
/// copies are constants, so only the numerator's first argument carries a
/// gradient. The prior enters as `-(1/N) log p(theta_i)` so that minimising
/// the loss maximises the posterior.
pub fn repulsive_loss(
    member_outputs: &[Vec<f64>],
    member_nlls: &[f64],
    log_priors: &[f64],
    beta: f64,
    n_total: usize,
    bandwidth: BandwidthRule,
) -> Result<RepulsiveLoss> {
    let k = member_outputs.len();
    if k < 2 {
        return Err(UqError::InvalidArgument("repulsion needs at least two members".into()));
    }
    if member_nlls.len() != k || log_priors.len() != k {
        return Err(UqError::DimensionMismatch {
            expected: k,
            got: member_nlls.len().min(log_priors.len()),
        });
    }
    if n_total == 0 {
        return Err(UqError::EmptyInput("training set"));
    }
    let dim = member_outputs[0].len();
    if let Some(bad) = member_outputs.iter().find(|f| f.len() != dim) {
        return Err(UqError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let mut d2 = vec![vec![0.0; k]; k];
    let mut off_diag = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let d = sq_dist(&member_outputs[i], &member_outputs[j]);
            d2[i][j] = d;
            d2[j][i] = d;
            off_diag.push(d);
        }
    }
    let bw = match bandwidth {
        BandwidthRule::MedianHeuristic => median_heuristic_bandwidth(&off_diag, k)?,
        BandwidthRule::Fixed(h) => Bandwidth { h, fallback: false },
    };
    if !(bw.h > 0.0) || !bw.h.is_finite() {
        return Err(UqError::BandwidthCollapse);
    }

    let n = n_total as f64;
    let mut loss = 0.0;
    let mut ratios = Vec::with_capacity(k);
    let mut grads = Vec::with_capacity(k);
    for i in 0..k {
        let kern: Vec<f64> = d2[i].iter().map(|d| (-d / bw.h).exp()).collect();
        // The numerator and denominator coincide in value; only the
        // numerator is differentiated.
        let denom: f64 = kern.iter().sum();
        if !(denom > 0.0) {
            return Err(UqError::BandwidthCollapse);
        }
        let ratio = kern.iter().sum::<f64>() / denom;
        let mut g = vec![0.0; dim];
        let coeff = -2.0 * beta / (n * bw.h * denom);
        for (j, kij) in kern.iter().enumerate() {
            if j == i || *kij == 0.0 {
                continue;
            }
            for ((gd, fi), fj) in g.iter_mut().zip(&member_outputs[i]).zip(&member_outputs[j]) {
                *gd += coeff * kij * (fi - fj);
            }
        }
        loss += member_nlls[i] + beta / n * ratio - log_priors[i] / n;
        ratios.push(ratio);
        grads.push(g);
    }
    Ok(RepulsiveLoss {
        loss: loss / k as f64,
        ratios,
        grads,
        bandwidth: bw,
    })
}

/// Function values the kernel compares: predicted means for a Gaussian
/// head, class probabilities for a softmax head.
fn function_values(spec: &MlpSpec, theta: &[f64], data: &Data, batch: &[usize], kind: LossKind, scratch: &mut Scratch) -> Vec<f64> {
    let mut f = Vec::new();
    for &i in batch {
        let out = spec.forward_with(theta, &data.xs[i], scratch);
        match kind {
            LossKind::GaussianNll => f.push(out[0]),
            LossKind::CategoricalNll => f.extend(ClassHead::from_logits(out).probs),
        }
    }
    f
}

/// Maps a cotangent on the function values back to raw network outputs.
fn output_cotangents(spec: &MlpSpec, theta: &[f64], data: &Data, batch: &[usize], kind: LossKind, g: &[f64], scratch: &mut Scratch) -> Vec<Vec<f64>> {
    match kind {
        LossKind::GaussianNll => g
            .iter()
            .map(|&gm| {
                let mut d = vec![0.0; spec.output_dim];
                d[0] = gm;
                d
            })
            .collect(),
        LossKind::CategoricalNll => {
            let c = spec.output_dim;
            batch
                .iter()
                .enumerate()
                .map(|(b, &i)| {
                    let p = ClassHead::from_logits(spec.forward_with(theta, &data.xs[i], scratch)).probs;
                    let gp = &g[b * c..(b + 1) * c];
                    let dot: f64 = gp.iter().zip(&p).map(|(a, b)| a * b).sum();
                    p.iter().zip(gp).map(|(pk, gk)| pk * (gk - dot)).collect()
                })
                .collect()
        }
    }
}

/// Output of repulsive training.
#[derive(Clone, Debug)]
pub struct RepulsiveFit {
    pub samples: PosteriorSamples,
    /// Steps on which the median heuristic fell back to bandwidth 1.0.
    pub bandwidth_fallbacks: usize,
}

/// Trains `K` members jointly under the repulsive objective. Member
/// initialisation and batch order use the same streams as
/// [`train_deep_ensemble`], so `beta = 0` reproduces it exactly.
pub fn train_repulsive_ensemble(
    spec: &MlpSpec,
    data: &Data,
    kind: LossKind,
    cfg: &EnsembleConfig,
    rng: &RngStream,
) -> Result<RepulsiveFit> {
    validate(spec, data, cfg)?;
    let k = cfg.members;
    if k < 2 && cfg.beta != 0.0 {
        return Err(UqError::InvalidArgument("repulsive ensembles need at least two members".into()));
    }
    let schedule = batch_schedule(data.len(), cfg.batch_size, cfg.epochs, &mut rng.split(BATCH_STREAM));
    let mut thetas: Vec<ParamVector> = (0..k).map(|i| spec.init(&mut rng.split(i as u64))).collect();
    let mut opts: Vec<Adam> = (0..k).map(|_| Adam::new(spec.n_params(), cfg.lr)).collect();
    let mut bad_steps = vec![0usize; k];
    let mut scratch = spec.scratch();
    let mut grad = vec![0.0; spec.n_params()];
    let mut fallbacks = 0;

    for (step, batch) in schedule.iter().enumerate() {
        let extras: Option<Vec<Vec<Vec<f64>>>> = if cfg.beta != 0.0 {
            let fs: Vec<Vec<f64>> = thetas
                .iter()
                .map(|t| function_values(spec, t.as_slice(), data, batch, kind, &mut scratch))
                .collect();
            // NLL and prior values do not affect the repulsion gradient.
            let zeros = vec![0.0; k];
            let rep = repulsive_loss(&fs, &zeros, &zeros, cfg.beta, data.len(), cfg.bandwidth)?;
            if rep.bandwidth.fallback {
                fallbacks += 1;
            }
            Some(
                thetas
                    .iter()
                    .zip(&rep.grads)
                    .map(|(t, g)| output_cotangents(spec, t.as_slice(), data, batch, kind, g, &mut scratch))
                    .collect(),
            )
        } else {
            None
        };
        for i in 0..k {
            opts[i].lr = cfg.lr_at(step, schedule.len());
            let extra = extras.as_ref().map(|e| e[i].as_slice());
            let outcome = member_gradient(spec, thetas[i].as_slice(), data, batch, kind, cfg.prior_var, extra, &mut grad, &mut scratch);
            match outcome {
                Ok(_) if grad.iter().all(|g| g.is_finite()) => {
                    bad_steps[i] = 0;
                    opts[i].step(thetas[i].as_mut_slice(), &grad);
                }
                Ok(_) | Err(UqError::NonFinite(_)) => {
                    bad_steps[i] += 1;
                    if bad_steps[i] >= MAX_NONFINITE_STEPS {
                        return Err(UqError::MemberFailed {
                            member: i,
                            source: Box::new(UqError::Diverged {
                                steps: step + 1,
                                context: "repulsive ensemble".into(),
                            }),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(RepulsiveFit {
        samples: PosteriorSamples::new(thetas, SampleSource::Repulsive)?,
        bandwidth_fallbacks: fallbacks,
    })
}
