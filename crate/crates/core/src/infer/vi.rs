use serde::{Deserialize, Serialize};

use super::{LogLikelihood, PosteriorSamples, SampleSource};
use crate::conjugate::kl_diag_gaussians;
use crate::error::{Result, UqError};
use crate::nn::ParamVector;
use crate::optim::Adam;
use crate::rng::RngStream;
use crate::special::{sigmoid, softplus, softplus_inverse};

/// Consecutive non-finite steps tolerated before training is declared diverged.
const MAX_NONFINITE_STEPS: usize = 10;

/// Fully factorised Gaussian `q(theta) = N(mu, diag(softplus(rho)^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldPosterior {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl MeanFieldPosterior {
    pub fn new(mu: Vec<f64>, std: f64) -> Self {
        let rho = vec![softplus_inverse(std); mu.len()];
        Self { mu, rho }
    }

    /// The prior `N(0, prior_var I)` expressed in this family.
    pub fn prior(dim: usize, prior_var: f64) -> Self {
        Self::new(vec![0.0; dim], prior_var.sqrt())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r).powi(2)).collect()
    }

    pub fn kl_to_prior(&self, prior_var: f64) -> Result<f64> {
        let n = self.dim();
        kl_diag_gaussians(&self.mu, &self.variance(), &vec![0.0; n], &vec![prior_var; n])
    }

    pub fn sample(&self, rng: &mut RngStream) -> ParamVector {
        ParamVector::from_vec(
            self.mu
                .iter()
                .zip(&self.rho)
                .map(|(m, r)| m + softplus(*r) * rng.next_normal())
                .collect(),
        )
    }

    pub fn samples(&self, n: usize, rng: &mut RngStream) -> Result<PosteriorSamples> {
        PosteriorSamples::new((0..n).map(|_| self.sample(rng)).collect(), SampleSource::Vi)
    }
}

/// Negative ELBO and its gradient with respect to `(mu, rho)`.
#[derive(Clone, Debug)]
pub struct ElboEval {
    pub loss: f64,
    pub kl: f64,
    pub expected_nll: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Negative ELBO `KL(q || p) - E_q[log p(D | theta)]`, with the expectation
/// estimated from the supplied standard-normal draws `eps` through
/// `theta = mu + softplus(rho) * eps`.
pub fn elbo_loss_with_noise(
    q: &MeanFieldPosterior,
    model: &impl LogLikelihood,
    prior_var: f64,
    eps: &[Vec<f64>],
) -> Result<ElboEval> {
    let n = q.dim();
    if model.dim() != n {
        return Err(UqError::DimensionMismatch {
            expected: model.dim(),
            got: n,
        });
    }
    if eps.is_empty() {
        return Err(UqError::InvalidArgument("at least one Monte Carlo draw is required".into()));
    }
    let std = q.std();
    let kl = q.kl_to_prior(prior_var)?;
    let mut grad_mu: Vec<f64> = q.mu.iter().map(|m| m / prior_var).collect();
    let mut grad_std: Vec<f64> = std.iter().map(|s| s / prior_var - 1.0 / s).collect();

    let scale = 1.0 / eps.len() as f64;
    let mut expected_nll = 0.0;
    let mut theta = vec![0.0; n];
    let mut g = vec![0.0; n];
    for e in eps {
        if e.len() != n {
            return Err(UqError::DimensionMismatch { expected: n, got: e.len() });
        }
        for i in 0..n {
            theta[i] = q.mu[i] + std[i] * e[i];
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        expected_nll += scale * model.nll_grad(&theta, &mut g)?;
        for i in 0..n {
            grad_mu[i] += scale * g[i];
            grad_std[i] += scale * g[i] * e[i];
        }
    }
    let grad_rho = grad_std
        .iter()
        .zip(&q.rho)
        .map(|(gs, r)| gs * sigmoid(*r))
        .collect();
    let loss = kl + expected_nll;
    if !loss.is_finite() {
        return Err(UqError::NonFinite("negative ELBO"));
    }
    Ok(ElboEval {
        loss,
        kl,
        expected_nll,
        grad_mu,
        grad_rho,
    })
}

pub fn elbo_loss(
    q: &MeanFieldPosterior,
    model: &impl LogLikelihood,
    prior_var: f64,
    mc_draws: usize,
    rng: &mut RngStream,
) -> Result<ElboEval> {
    if mc_draws == 0 {
        return Err(UqError::InvalidArgument("mc_draws must be at least 1".into()));
    }
    let eps: Vec<Vec<f64>> = (0..mc_draws).map(|_| rng.normal_vec(q.dim())).collect();
    elbo_loss_with_noise(q, model, prior_var, &eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViConfig {
    #[serde(default = "default_prior_var")]
    pub prior_var: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    /// Initial posterior standard deviation of every coordinate.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// When set, the step size decays geometrically from `lr` to this value.
    #[serde(default)]
    pub lr_final: Option<f64>,
}

fn default_prior_var() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    2000
}
fn default_mc_draws() -> usize {
    1
}
fn default_init_std() -> f64 {
    0.01
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            prior_var: default_prior_var(),
            lr: default_lr(),
            epochs: default_epochs(),
            mc_draws: default_mc_draws(),
            init_std: default_init_std(),
            lr_final: None,
        }
    }
}

/// Full-batch stochastic optimisation of the negative ELBO with Adam.
pub fn train_vi(
    model: &impl LogLikelihood,
    init_mu: ParamVector,
    cfg: &ViConfig,
    rng: &mut RngStream,
) -> Result<MeanFieldPosterior> {
    if model.n_data() == 0 {
        return Err(UqError::EmptyInput("variational training data"));
    }
    let mut q = MeanFieldPosterior::new(init_mu.into_inner(), cfg.init_std);
    let n = q.dim();
    let mut opt_mu = Adam::new(n, cfg.lr);
    let mut opt_rho = Adam::new(n, cfg.lr);
    let mut bad_steps = 0;
    for step in 0..cfg.epochs {
        if let Some(lr_final) = cfg.lr_final {
            let lr = cfg.lr * (lr_final / cfg.lr).powf(step as f64 / cfg.epochs as f64);
            opt_mu.lr = lr;
            opt_rho.lr = lr;
        }
        match elbo_loss(&q, model, cfg.prior_var, cfg.mc_draws, rng) {
            Ok(eval) if eval.grad_mu.iter().chain(&eval.grad_rho).all(|g| g.is_finite()) => {
                bad_steps = 0;
                opt_mu.step(&mut q.mu, &eval.grad_mu);
                opt_rho.step(&mut q.rho, &eval.grad_rho);
            }
            Ok(_) | Err(UqError::NonFinite(_)) => {
                bad_steps += 1;
                if bad_steps >= MAX_NONFINITE_STEPS {
                    return Err(UqError::Diverged {
                        steps: step + 1,
                        context: "variational inference".into(),
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(q)
}
