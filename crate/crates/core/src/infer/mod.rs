//! Approximate posterior inference over flat parameter vectors: mean-field
//! variational inference, Hamiltonian Monte Carlo, and the predictive moment
//! decomposition shared by every sample-based method.

mod hmc;
mod predictive;
mod vi;

pub use hmc::{hamiltonian, hmc_sample, leapfrog, HmcConfig, HmcOutput};
pub use predictive::{
    class_probabilities, member_heads, predictive_moments_regression, predictive_regression_batch, PredictiveSummary,
};
pub use vi::{elbo_loss, elbo_loss_with_noise, train_vi, ElboEval, MeanFieldPosterior, ViConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::nn::{accumulate_loss_grad, Data, LossKind, MlpSpec, ParamVector};

/// Summed negative log-likelihood of a fixed dataset.
pub trait LogLikelihood: Sync {
    fn dim(&self) -> usize;

    fn n_data(&self) -> usize;

    /// Returns the summed NLL and adds its gradient into `grad`.
    fn nll_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Potential energy `U(theta) = -log p(theta | D) + const` for HMC.
pub trait Potential {
    fn dim(&self) -> usize;

    /// Returns `U(theta)` and overwrites `grad` with its gradient.
    fn energy_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Network likelihood over a dataset with one of the standard heads.
pub struct MlpLikelihood<'a> {
    pub spec: &'a MlpSpec,
    pub data: &'a Data,
    pub kind: LossKind,
}

impl LogLikelihood for MlpLikelihood<'_> {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn n_data(&self) -> usize {
        self.data.len()
    }

    fn nll_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let mut scratch = self.spec.scratch();
        accumulate_loss_grad(self.spec, theta, self.data, None, self.kind, grad, &mut scratch)
    }
}

/// Likelihood times an isotropic Gaussian prior `N(0, prior_var I)`.
pub struct GaussianPriorPosterior<L> {
    pub likelihood: L,
    pub prior_var: f64,
}

impl<L: LogLikelihood> Potential for GaussianPriorPosterior<L> {
    fn dim(&self) -> usize {
        self.likelihood.dim()
    }

    fn energy_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let nll = self.likelihood.nll_grad(theta, grad)?;
        let mut prior = 0.0;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += t / self.prior_var;
            prior += t * t;
        }
        Ok(nll + 0.5 * prior / self.prior_var)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Vi,
    Hmc,
    Ensemble,
    Repulsive,
}

/// Parameter draws from some posterior approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub thetas: Vec<ParamVector>,
    pub source: SampleSource,
}

impl PosteriorSamples {
    pub fn new(thetas: Vec<ParamVector>, source: SampleSource) -> Result<Self> {
        let first = thetas.first().ok_or(UqError::EmptyInput("posterior samples"))?;
        if let Some(bad) = thetas.iter().find(|t| t.len() != first.len()) {
            return Err(UqError::DimensionMismatch {
                expected: first.len(),
                got: bad.len(),
            });
        }
        Ok(Self { thetas, source })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}
