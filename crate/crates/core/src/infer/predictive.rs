use serde::{Deserialize, Serialize};

use super::PosteriorSamples;
use crate::error::{Result, UqError};
use crate::nn::{ClassHead, MlpSpec, RegressionHead};

/// Predictive moments at one input, split by the law of total variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    /// Mean of the member noise variances.
    pub aleatoric: f64,
    /// Population variance of the member means.
    pub epistemic: f64,
    pub total: f64,
}

impl PredictiveSummary {
    /// Combines per-member `(mean, noise variance)` pairs.
    pub fn from_members(members: &[(f64, f64)]) -> Result<Self> {
        if members.len() < 2 {
            return Err(UqError::InvalidArgument(format!(
                "epistemic variance needs at least 2 samples, got {}",
                members.len()
            )));
        }
        let k = members.len() as f64;
        // Shifting by the first mean keeps identical members at exactly zero spread.
        let origin = members[0].0;
        let shift = members.iter().map(|m| m.0 - origin).sum::<f64>() / k;
        let mean = origin + shift;
        let epistemic = members.iter().map(|m| (m.0 - origin - shift).powi(2)).sum::<f64>() / k;
        let aleatoric = members.iter().map(|m| m.1).sum::<f64>() / k;
        Ok(Self {
            mean,
            aleatoric,
            epistemic,
            total: aleatoric + epistemic,
        })
    }

    pub fn std(&self) -> f64 {
        self.total.sqrt()
    }
}

/// Gaussian heads of every sample at `x`.
pub fn member_heads(samples: &PosteriorSamples, spec: &MlpSpec, x: &[f64]) -> Result<Vec<RegressionHead>> {
    if spec.output_dim != 2 {
        return Err(UqError::DimensionMismatch {
            expected: 2,
            got: spec.output_dim,
        });
    }
    let mut scratch = spec.scratch();
    samples
        .thetas
        .iter()
        .map(|theta| {
            spec.check_params(theta)?;
            check_input(spec, x)?;
            Ok(RegressionHead::from_outputs(spec.forward_with(theta.as_slice(), x, &mut scratch)))
        })
        .collect()
}

pub fn predictive_moments_regression(
    samples: &PosteriorSamples,
    spec: &MlpSpec,
    x: &[f64],
) -> Result<PredictiveSummary> {
    let members: Vec<(f64, f64)> = member_heads(samples, spec, x)?
        .iter()
        .map(|h| (h.mu, h.variance()))
        .collect();
    PredictiveSummary::from_members(&members)
}

pub fn predictive_regression_batch(
    samples: &PosteriorSamples,
    spec: &MlpSpec,
    xs: &[Vec<f64>],
) -> Result<Vec<PredictiveSummary>> {
    xs.iter()
        .map(|x| predictive_moments_regression(samples, spec, x))
        .collect()
}

/// Softmax probabilities of every sample at `x`, one row per sample.
pub fn class_probabilities(samples: &PosteriorSamples, spec: &MlpSpec, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_input(spec, x)?;
    let mut scratch = spec.scratch();
    samples
        .thetas
        .iter()
        .map(|theta| {
            spec.check_params(theta)?;
            Ok(ClassHead::from_logits(spec.forward_with(theta.as_slice(), x, &mut scratch)).probs)
        })
        .collect()
}

fn check_input(spec: &MlpSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(UqError::DimensionMismatch {
            expected: spec.input_dim,
            got: x.len(),
        });
    }
    Ok(())
}
