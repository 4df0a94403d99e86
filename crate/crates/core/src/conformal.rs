//! Split conformal prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::interval::Interval;

/// Calibrated score threshold at miscoverage `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    /// Calibration scores in ascending order.
    pub scores: Vec<f64>,
    /// `+inf` when the calibration set is too small for the requested level.
    pub q_hat: f64,
    pub delta: f64,
}

/// 1-based rank `ceil((n + 1)(1 - delta))` of the calibration quantile.
/// The small offset keeps exact products such as `10 * 0.9` from rounding up.
pub fn quantile_rank(n: usize, delta: f64) -> usize {
    ((n as f64 + 1.0) * (1.0 - delta) - 1e-9).ceil().max(1.0) as usize
}

impl ConformalCalibration {
    pub fn from_scores(mut scores: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(UqError::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        if scores.is_empty() {
            return Err(UqError::EmptyInput("calibration set"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(UqError::NonFinite("conformal score"));
        }
        scores.sort_by(f64::total_cmp);
        let k = quantile_rank(scores.len(), delta);
        let q_hat = if k > scores.len() { f64::INFINITY } else { scores[k - 1] };
        Ok(Self { scores, q_hat, delta })
    }

    pub fn level(&self) -> f64 {
        1.0 - self.delta
    }

    /// `[f - q_hat, f + q_hat]`.
    pub fn regression_interval(&self, f_xstar: f64) -> Interval {
        Interval::centered(f_xstar, self.q_hat)
    }

    /// Labels whose predicted probability is at least `1 - q_hat`.
    pub fn classification_set(&self, probs: &[f64]) -> Vec<usize> {
        let threshold = 1.0 - self.q_hat;
        (0..probs.len()).filter(|&k| probs[k] >= threshold).collect()
    }
}

/// `|y - f(x)|`.
pub fn absolute_residual_score(y: f64, prediction: f64) -> f64 {
    (y - prediction).abs()
}

/// `1 - f(x)_y`.
pub fn class_probability_score(probs: &[f64], label: usize) -> f64 {
    1.0 - probs[label]
}

/// Calibrates any score function over `(x, y)` pairs.
pub fn calibrate<X, Y>(
    score_fn: impl Fn(&X, &Y) -> f64,
    cal_set: &[(X, Y)],
    delta: f64,
) -> Result<ConformalCalibration> {
    ConformalCalibration::from_scores(cal_set.iter().map(|(x, y)| score_fn(x, y)).collect(), delta)
}

/// Absolute-residual calibration of a point regressor.
pub fn calibrate_regression(
    predict: impl Fn(&[f64]) -> f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    delta: f64,
) -> Result<ConformalCalibration> {
    if xs.len() != ys.len() {
        return Err(UqError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let scores = xs.iter().zip(ys).map(|(x, &y)| absolute_residual_score(y, predict(x))).collect();
    ConformalCalibration::from_scores(scores, delta)
}
