//! Exact Gaussian-process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::special::LN_2PI;

/// Diagonal jitter tried in order until the Cholesky factorisation succeeds.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHypers {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHypers {
    fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) || !(self.signal_var > 0.0) || !(self.noise_var >= 0.0) {
            return Err(UqError::InvalidArgument(format!(
                "GP hyperparameters out of range: {self:?}"
            )));
        }
        Ok(())
    }

    /// `signal_var * exp(-|a - b|^2 / (2 lengthscale^2))`.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-0.5 * d2 / (self.lengthscale * self.lengthscale)).exp()
    }
}

/// A GP conditioned on training data.
#[derive(Clone, Debug)]
pub struct GpModel {
    pub hypers: GpHypers,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
    /// Jitter that was added to the diagonal on top of `noise_var`.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    /// `(K + noise_var I)^{-1} y`.
    alpha: DVector<f64>,
}

pub fn kernel_matrix(hypers: &GpHypers, xs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| hypers.kernel(&xs[i], &xs[j]))
}

pub fn fit_gp(xs: &[Vec<f64>], ys: &[f64], hypers: GpHypers) -> Result<GpModel> {
    hypers.validate()?;
    if xs.is_empty() {
        return Err(UqError::EmptyInput("GP training inputs"));
    }
    if xs.len() != ys.len() {
        return Err(UqError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(UqError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let k = kernel_matrix(&hypers, xs);
    for jitter in JITTER_LADDER {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += hypers.noise_var + jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            if jitter > 0.0 {
                log::debug!("GP factorisation needed jitter {jitter:e}");
            }
            let alpha = chol.solve(&DVector::from_column_slice(ys));
            return Ok(GpModel {
                hypers,
                train_x: xs.to_vec(),
                train_y: ys.to_vec(),
                jitter,
                chol,
                alpha,
            });
        }
    }
    Err(UqError::NotPositiveDefinite("GP kernel matrix after maximum jitter"))
}

impl GpModel {
    /// Lower-triangular factor of `K + (noise_var + jitter) I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Predictive mean and variance at `x`; the noisy variance adds `noise_var`.
    pub fn predict(&self, x: &[f64], include_noise: bool) -> (f64, f64) {
        let k_star = DVector::from_iterator(
            self.train_x.len(),
            self.train_x.iter().map(|xi| self.hypers.kernel(xi, x)),
        );
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor has a positive diagonal");
        let mut var = self.hypers.kernel(x, x) - v.norm_squared();
        if var < 0.0 {
            if var < -1e-12 {
                log::warn!("GP latent variance {var:e} clamped to zero");
            }
            var = 0.0;
        }
        if include_noise {
            var += self.hypers.noise_var;
        }
        (mean, var)
    }

    /// `log p(y | X, hypers)` through the Cholesky factor.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(&self.train_y);
        let n = self.train_y.len() as f64;
        let log_det_half: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - log_det_half - 0.5 * n * LN_2PI
    }
}

pub fn gp_predict(model: &GpModel, x_star: &[f64], include_noise: bool) -> (f64, f64) {
    model.predict(x_star, include_noise)
}

pub fn log_marginal_likelihood(model: &GpModel) -> f64 {
    model.log_marginal_likelihood()
}

/// Candidate values along each hyperparameter axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub lengthscales: Vec<f64>,
    pub signal_vars: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

impl HyperGrid {
    /// `n` log-spaced points from `lo` to `hi` inclusive.
    pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        let (a, b) = (lo.ln(), hi.ln());
        (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
    }

    fn sorted(values: &[f64]) -> Vec<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Grid point with the highest evidence; on ties the lexicographically
/// smallest `(lengthscale, signal_var, noise_var)` wins.
pub fn select_hypers(xs: &[Vec<f64>], ys: &[f64], grid: &HyperGrid) -> Result<GpModel> {
    let mut best: Option<(f64, GpModel)> = None;
    let mut last_err = None;
    for &lengthscale in &HyperGrid::sorted(&grid.lengthscales) {
        for &signal_var in &HyperGrid::sorted(&grid.signal_vars) {
            for &noise_var in &HyperGrid::sorted(&grid.noise_vars) {
                let hypers = GpHypers {
                    lengthscale,
                    signal_var,
                    noise_var,
                };
                match fit_gp(xs, ys, hypers) {
                    Ok(model) => {
                        let lml = model.log_marginal_likelihood();
                        if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                            best = Some((lml, model));
                        }
                    }
                    Err(e @ (UqError::NotPositiveDefinite(_) | UqError::InvalidArgument(_))) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    match best {
        Some((_, model)) => Ok(model),
        None => Err(last_err.unwrap_or(UqError::EmptyInput("hyperparameter grid"))),
    }
}
