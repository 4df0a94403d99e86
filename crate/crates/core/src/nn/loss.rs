use serde::{Deserialize, Serialize};

use super::mlp::{MlpSpec, ParamVector, Scratch};
use super::Data;
use crate::error::{Result, UqError};

/// Bounds applied to the raw log-sigma output before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Heteroscedastic Gaussian head: output 0 is the mean, output 1 the log std.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionHead {
    pub mu: f64,
    pub log_sigma: f64,
}

impl RegressionHead {
    pub fn from_outputs(out: &[f64]) -> Self {
        Self {
            mu: out[0],
            log_sigma: out[1].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn variance(&self) -> f64 {
        (2.0 * self.log_sigma).exp()
    }
}

/// Softmax head over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassHead {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ClassHead {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        Self {
            logits: logits.to_vec(),
            probs: log_probs.iter().map(|lp| lp.exp()).collect(),
            log_probs,
        }
    }

    /// Builds a head from probabilities; zero entries are floored at the
    /// smallest positive normal so the log stays finite.
    pub fn from_probs(probs: &[f64]) -> Self {
        let log_probs: Vec<f64> = probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
        Self {
            logits: log_probs.clone(),
            probs: probs.to_vec(),
            log_probs,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

pub fn nll_gaussian(head: &RegressionHead, y: f64) -> f64 {
    let r = y - head.mu;
    head.log_sigma + 0.5 * r * r / head.variance() + HALF_LN_2PI
}

pub fn nll_categorical(head: &ClassHead, y: usize) -> Result<f64> {
    if y >= head.n_classes() {
        return Err(UqError::InvalidArgument(format!(
            "class index {y} out of range for {} classes",
            head.n_classes()
        )));
    }
    Ok(-head.log_probs[y])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    GaussianNll,
    CategoricalNll,
}

impl LossKind {
    /// Loss at one point and its gradient with respect to the raw outputs.
    pub fn eval(self, out: &[f64], y: f64, d_out: &mut [f64]) -> Result<f64> {
        match self {
            LossKind::GaussianNll => {
                let head = RegressionHead::from_outputs(out);
                let var = head.variance();
                let r = y - head.mu;
                d_out[0] = -r / var;
                d_out[1] = if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&out[1]) {
                    1.0 - r * r / var
                } else {
                    0.0
                };
                Ok(nll_gaussian(&head, y))
            }
            LossKind::CategoricalNll => {
                let class = class_index(y, out.len())?;
                let head = ClassHead::from_logits(out);
                for (k, (d, p)) in d_out.iter_mut().zip(&head.probs).enumerate() {
                    *d = if k == class { p - 1.0 } else { *p };
                }
                nll_categorical(&head, class)
            }
        }
    }

    pub fn required_outputs(self) -> Option<usize> {
        match self {
            LossKind::GaussianNll => Some(2),
            LossKind::CategoricalNll => None,
        }
    }
}

pub(crate) fn class_index(y: f64, n_classes: usize) -> Result<usize> {
    if y < 0.0 || y.fract() != 0.0 || y as usize >= n_classes {
        return Err(UqError::InvalidArgument(format!(
            "label {y} is not a class index below {n_classes}"
        )));
    }
    Ok(y as usize)
}

/// Summed loss over `indices` (all points when `None`), accumulating the
/// gradient of that sum into `grad`.
pub fn accumulate_loss_grad(
    spec: &MlpSpec,
    theta: &[f64],
    data: &Data,
    indices: Option<&[usize]>,
    kind: LossKind,
    grad: &mut [f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    let mut d_out = vec![0.0; spec.output_dim];
    let mut total = 0.0;
    let mut visit = |i: usize| -> Result<()> {
        let out = spec.forward_with(theta, &data.xs[i], scratch);
        let loss = kind.eval(out, data.ys[i], &mut d_out)?;
        spec.backward_with(theta, scratch, &d_out, grad);
        total += loss;
        Ok(())
    };
    match indices {
        Some(idx) => idx.iter().try_for_each(|&i| visit(i))?,
        None => (0..data.len()).try_for_each(&mut visit)?,
    }
    if !total.is_finite() {
        return Err(UqError::NonFinite("network loss"));
    }
    Ok(total)
}

/// Summed loss only.
pub fn total_loss(spec: &MlpSpec, theta: &[f64], data: &Data, kind: LossKind, scratch: &mut Scratch) -> Result<f64> {
    let mut d_out = vec![0.0; spec.output_dim];
    let mut total = 0.0;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let out = spec.forward_with(theta, x, scratch);
        total += kind.eval(out, y, &mut d_out)?;
    }
    Ok(total)
}

fn check_head(spec: &MlpSpec, kind: LossKind) -> Result<()> {
    if let Some(n) = kind.required_outputs() {
        if spec.output_dim != n {
            return Err(UqError::DimensionMismatch {
                expected: n,
                got: spec.output_dim,
            });
        }
    }
    Ok(())
}

/// Mean loss over the batch and its exact gradient.
pub fn grad(spec: &MlpSpec, theta: &ParamVector, data: &Data, kind: LossKind) -> Result<(f64, ParamVector)> {
    spec.check_params(theta)?;
    check_head(spec, kind)?;
    if data.is_empty() {
        return Err(UqError::EmptyInput("gradient batch"));
    }
    for x in &data.xs {
        if x.len() != spec.input_dim {
            return Err(UqError::DimensionMismatch {
                expected: spec.input_dim,
                got: x.len(),
            });
        }
    }
    let mut g = vec![0.0; theta.len()];
    let mut scratch = spec.scratch();
    let total = accumulate_loss_grad(spec, theta.as_slice(), data, None, kind, &mut g, &mut scratch)?;
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok((total / n, ParamVector::from_vec(g)))
}
