use serde::{Deserialize, Serialize};

use super::{PosteriorSamples, Potential, SampleSource};
use crate::error::{Result, UqError};
use crate::nn::ParamVector;
use crate::rng::RngStream;

/// Static HMC settings with an identity mass matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Retained draws after burn-in.
    pub n_samples: usize,
    /// Discarded warm-up iterations; 20% of `n_samples` when absent.
    #[serde(default)]
    pub burn_in: Option<usize>,
}

impl HmcConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_samples / 5)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.leapfrog_steps == 0 || self.n_samples == 0 {
            return Err(UqError::InvalidArgument(
                "HMC needs step_size > 0, leapfrog_steps >= 1 and n_samples >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HmcOutput {
    pub samples: PosteriorSamples,
    pub acceptance_rate: f64,
    /// Number of trajectories rejected because the energy became non-finite.
    pub nonfinite_rejections: usize,
}

/// `H(theta, r) = U(theta) + r^T r / 2`.
pub fn hamiltonian(potential_energy: f64, momentum: &[f64]) -> f64 {
    potential_energy + 0.5 * momentum.iter().map(|r| r * r).sum::<f64>()
}

/// Leapfrog integration of `n_steps` steps. `grad` must hold `∇U(theta)` on
/// entry and holds `∇U` at the final position on exit; returns the final
/// potential energy.
pub fn leapfrog(
    potential: &impl Potential,
    theta: &mut [f64],
    momentum: &mut [f64],
    grad: &mut [f64],
    step_size: f64,
    n_steps: usize,
) -> Result<f64> {
    let mut energy = f64::NAN;
    for r in momentum.iter_mut().zip(grad.iter()) {
        *r.0 -= 0.5 * step_size * r.1;
    }
    for step in 0..n_steps {
        for (t, r) in theta.iter_mut().zip(momentum.iter()) {
            *t += step_size * r;
        }
        energy = potential.energy_grad(theta, grad)?;
        let scale = if step + 1 == n_steps { 0.5 } else { 1.0 };
        for (r, g) in momentum.iter_mut().zip(grad.iter()) {
            *r -= scale * step_size * g;
        }
    }
    Ok(energy)
}

/// Metropolis-corrected HMC starting from `init`.
pub fn hmc_sample(
    potential: &impl Potential,
    init: &ParamVector,
    cfg: &HmcConfig,
    rng: &mut RngStream,
) -> Result<HmcOutput> {
    cfg.validate()?;
    let dim = potential.dim();
    if init.len() != dim {
        return Err(UqError::DimensionMismatch {
            expected: dim,
            got: init.len(),
        });
    }
    let mut theta = init.as_slice().to_vec();
    let mut grad = vec![0.0; dim];
    let mut energy = potential.energy_grad(&theta, &mut grad)?;
    if !energy.is_finite() {
        return Err(UqError::NonFinite("HMC initial potential"));
    }

    let burn_in = cfg.burn_in();
    let mut kept = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0usize;
    let mut nonfinite = 0usize;
    let mut proposal = vec![0.0; dim];
    let mut proposal_grad = vec![0.0; dim];
    for iter in 0..burn_in + cfg.n_samples {
        let mut momentum = rng.normal_vec(dim);
        let h0 = hamiltonian(energy, &momentum);
        proposal.copy_from_slice(&theta);
        proposal_grad.copy_from_slice(&grad);
        let outcome = leapfrog(
            potential,
            &mut proposal,
            &mut momentum,
            &mut proposal_grad,
            cfg.step_size,
            cfg.leapfrog_steps,
        );
        // The uniform is always drawn so the stream advances identically.
        let u = rng.next_uniform();
        match outcome {
            Ok(new_energy) if new_energy.is_finite() => {
                let h1 = hamiltonian(new_energy, &momentum);
                if h1.is_finite() && u.ln() < h0 - h1 {
                    std::mem::swap(&mut theta, &mut proposal);
                    std::mem::swap(&mut grad, &mut proposal_grad);
                    energy = new_energy;
                    accepted += 1;
                } else if !h1.is_finite() {
                    nonfinite += 1;
                }
            }
            Ok(_) | Err(UqError::NonFinite(_)) => nonfinite += 1,
            Err(e) => return Err(e),
        }
        if iter >= burn_in {
            kept.push(ParamVector::from_vec(theta.clone()));
        }
    }
    Ok(HmcOutput {
        samples: PosteriorSamples::new(kept, SampleSource::Hmc)?,
        acceptance_rate: accepted as f64 / (burn_in + cfg.n_samples) as f64,
        nonfinite_rejections: nonfinite,
    })
}
