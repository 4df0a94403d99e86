//! Evidential heads: Normal-Inverse-Gamma regression and Dirichlet
//! classification, with their training losses and exact gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::special::{digamma, ln_gamma, sigmoid, softplus, trigamma};

/// Normal-Inverse-Gamma evidential parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub gamma: f64,
    pub v: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(gamma: f64, v: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { gamma, v, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    /// Links raw outputs `(g, v', a', b')` to `(g, softplus v', 1 + softplus a', softplus b')`.
    pub fn from_raw(raw: [f64; 4]) -> Self {
        Self {
            gamma: raw[0],
            v: softplus(raw[1]),
            alpha: 1.0 + softplus(raw[2]),
            beta: softplus(raw[3]),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.v > 0.0 && self.beta > 0.0) || !self.gamma.is_finite() {
            return Err(UqError::InvalidArgument(format!("invalid NIG parameters {self:?}")));
        }
        if !(self.alpha > 1.0) {
            return Err(UqError::InvalidArgument(format!(
                "NIG variance needs alpha > 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `2 v + alpha`.
    pub fn total_evidence(&self) -> f64 {
        2.0 * self.v + self.alpha
    }
}

/// Student-t with location, squared scale and degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub loc: f64,
    pub scale2: f64,
    pub dof: f64,
}

impl StudentT {
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let nu = self.dof;
        let z2 = (y - self.loc).powi(2) / self.scale2;
        ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)
            - 0.5 * (nu * std::f64::consts::PI * self.scale2).ln()
            - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
    }
}

/// Marginal predictive `St(gamma, beta (1 + v) / (v alpha), 2 alpha)`.
pub fn nig_predictive(p: &NigParams) -> Result<StudentT> {
    p.validate()?;
    Ok(StudentT {
        loc: p.gamma,
        scale2: p.beta * (1.0 + p.v) / (p.v * p.alpha),
        dof: 2.0 * p.alpha,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NigUncertainty {
    pub mean: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub total_evidence: f64,
}

pub fn nig_uncertainties(p: &NigParams) -> Result<NigUncertainty> {
    p.validate()?;
    let aleatoric = p.beta / (p.alpha - 1.0);
    Ok(NigUncertainty {
        mean: p.gamma,
        aleatoric,
        epistemic: aleatoric / p.v,
        total_evidence: p.total_evidence(),
    })
}

/// Partial derivatives with respect to `(gamma, v, alpha, beta)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NigGrad {
    pub gamma: f64,
    pub v: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigGrad {
    /// Chains through the links of [`NigParams::from_raw`].
    pub fn to_raw(&self, raw: [f64; 4]) -> [f64; 4] {
        [
            self.gamma,
            self.v * sigmoid(raw[1]),
            self.alpha * sigmoid(raw[2]),
            self.beta * sigmoid(raw[3]),
        ]
    }
}

/// Negative log Student-t likelihood of `y` and its gradient.
fn nig_nll(p: &NigParams, y: f64) -> (f64, NigGrad) {
    let NigParams { gamma, v, alpha, beta } = *p;
    let r = y - gamma;
    let omega = 2.0 * beta * (1.0 + v);
    let a = v * r * r + omega;
    let nll = 0.5 * (std::f64::consts::PI / v).ln() - alpha * omega.ln() + (alpha + 0.5) * a.ln() + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5);
    let grad = NigGrad {
        gamma: -(alpha + 0.5) * 2.0 * v * r / a,
        v: -0.5 / v - alpha * 2.0 * beta / omega + (alpha + 0.5) * (r * r + 2.0 * beta) / a,
        alpha: -omega.ln() + a.ln() + digamma(alpha) - digamma(alpha + 0.5),
        beta: 2.0 * (1.0 + v) * ((alpha + 0.5) / a - alpha / omega),
    };
    (nll, grad)
}

#[derive(Clone, Debug)]
pub struct RegressionLoss {
    pub loss: f64,
    pub nll: f64,
    pub regulariser: f64,
    pub grads: Vec<NigGrad>,
}

/// Mean over points of the Student-t NLL plus `lambda |y - gamma| (2v + alpha)`.
pub fn loss_evidential_regression(params: &[NigParams], ys: &[f64], lambda: f64) -> Result<RegressionLoss> {
    if params.len() != ys.len() {
        return Err(UqError::DimensionMismatch {
            expected: params.len(),
            got: ys.len(),
        });
    }
    if params.is_empty() {
        return Err(UqError::EmptyInput("evidential regression batch"));
    }
    if !(lambda >= 0.0) {
        return Err(UqError::InvalidArgument("lambda must be non-negative".into()));
    }
    let n = params.len() as f64;
    let (mut nll_sum, mut reg_sum) = (0.0, 0.0);
    let mut grads = Vec::with_capacity(params.len());
    for (p, &y) in params.iter().zip(ys) {
        p.validate()?;
        let (nll, mut g) = nig_nll(p, y);
        let r = y - p.gamma;
        let phi = p.total_evidence();
        nll_sum += nll;
        reg_sum += r.abs() * phi;
        if r != 0.0 {
            g.gamma -= lambda * r.signum() * phi;
        }
        g.v += lambda * r.abs() * 2.0;
        g.alpha += lambda * r.abs();
        grads.push(NigGrad {
            gamma: g.gamma / n,
            v: g.v / n,
            alpha: g.alpha / n,
            beta: g.beta / n,
        });
    }
    let loss = (nll_sum + lambda * reg_sum) / n;
    if !loss.is_finite() {
        return Err(UqError::NonFinite("evidential regression loss"));
    }
    Ok(RegressionLoss {
        loss,
        nll: nll_sum / n,
        regulariser: reg_sum / n,
        grads,
    })
}

/// Dirichlet concentration parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    pub alphas: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(UqError::InvalidArgument(format!("invalid Dirichlet concentrations {alphas:?}")));
        }
        Ok(Self { alphas })
    }

    /// `alpha_k = 1 + softplus(raw_k)`, so zero evidence gives the flat Dirichlet.
    pub fn from_raw(raw: &[f64]) -> Self {
        Self {
            alphas: raw.iter().map(|&z| 1.0 + softplus(z)).collect(),
        }
    }

    /// `Phi = sum_k alpha_k`.
    pub fn strength(&self) -> f64 {
        self.alphas.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrediction {
    pub probs: Vec<f64>,
    pub variances: Vec<f64>,
    /// `K / Phi`; 1 without evidence.
    pub vacuity: f64,
}

pub fn dirichlet_predictive(p: &DirichletParams) -> DirichletPrediction {
    let s = p.strength();
    DirichletPrediction {
        probs: p.alphas.iter().map(|a| a / s).collect(),
        variances: p.alphas.iter().map(|a| a * (s - a) / (s * s * (s + 1.0))).collect(),
        vacuity: p.alphas.len() as f64 / s,
    }
}

/// `KL[Dir(alpha) || Dir(1, ..., 1)]` and its gradient in `alpha`.
pub fn kl_dirichlet_to_uniform(alphas: &[f64]) -> (f64, Vec<f64>) {
    let k = alphas.len() as f64;
    let s: f64 = alphas.iter().sum();
    let psi_s = digamma(s);
    let tri_s = trigamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(k);
    let mut grad = Vec::with_capacity(alphas.len());
    for &a in alphas {
        kl += -ln_gamma(a) + (a - 1.0) * (digamma(a) - psi_s);
        grad.push((a - 1.0) * trigamma(a) - (s - k) * tri_s);
    }
    (kl, grad)
}

#[derive(Clone, Debug)]
pub struct ClassificationLoss {
    pub loss: f64,
    pub risk: f64,
    pub kl: f64,
    /// Gradients with respect to each point's concentrations.
    pub grads: Vec<Vec<f64>>,
}

/// Mean over points of the expected squared error under the Dirichlet plus
/// `lambda_t` times the KL of the evidence-adjusted Dirichlet to the flat one.
pub fn loss_evidential_classification(
    params: &[DirichletParams],
    labels: &[usize],
    lambda_t: f64,
) -> Result<ClassificationLoss> {
    if params.len() != labels.len() {
        return Err(UqError::DimensionMismatch {
            expected: params.len(),
            got: labels.len(),
        });
    }
    if params.is_empty() {
        return Err(UqError::EmptyInput("evidential classification batch"));
    }
    if !(lambda_t >= 0.0) {
        return Err(UqError::InvalidArgument("lambda_t must be non-negative".into()));
    }
    let n = params.len() as f64;
    let (mut risk_sum, mut kl_sum) = (0.0, 0.0);
    let mut grads = Vec::with_capacity(params.len());
    for (p, &label) in params.iter().zip(labels) {
        let c = p.alphas.len();
        if label >= c {
            return Err(UqError::InvalidArgument(format!("label {label} out of range for {c} classes")));
        }
        let s = p.strength();
        let probs: Vec<f64> = p.alphas.iter().map(|a| a / s).collect();
        let onehot = |k: usize| if k == label { 1.0 } else { 0.0 };
        let mut risk = 0.0;
        let mut spread = 0.0;
        let mut coeffs = Vec::with_capacity(c);
        for (k, &pk) in probs.iter().enumerate() {
            risk += (pk - onehot(k)).powi(2) + pk * (1.0 - pk) / (s + 1.0);
            spread += pk * (1.0 - pk);
            coeffs.push(2.0 * (pk - onehot(k)) + (1.0 - 2.0 * pk) / (s + 1.0));
        }
        let mean_coeff: f64 = coeffs.iter().zip(&probs).map(|(a, b)| a * b).sum();
        let mut g: Vec<f64> = coeffs
            .iter()
            .map(|cj| (cj - mean_coeff) / s - spread / ((s + 1.0) * (s + 1.0)))
            .collect();

        let adjusted: Vec<f64> = p.alphas.iter().enumerate().map(|(k, a)| onehot(k) + (1.0 - onehot(k)) * a).collect();
        let (kl, kl_grad) = kl_dirichlet_to_uniform(&adjusted);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += lambda_t * (1.0 - onehot(k)) * kl_grad[k];
            *gk /= n;
        }
        risk_sum += risk;
        kl_sum += kl;
        grads.push(g);
    }
    let loss = (risk_sum + lambda_t * kl_sum) / n;
    if !loss.is_finite() {
        return Err(UqError::NonFinite("evidential classification loss"));
    }
    Ok(ClassificationLoss {
        loss,
        risk: risk_sum / n,
        kl: kl_sum / n,
        grads,
    })
}

/// KL weight at `epoch`: a linear ramp from 0 reaching 1 halfway through training.
pub fn annealing_coefficient(epoch: usize, total_epochs: usize) -> f64 {
    let half = (total_epochs as f64 / 2.0).max(1.0);
    (epoch as f64 / half).min(1.0)
}
