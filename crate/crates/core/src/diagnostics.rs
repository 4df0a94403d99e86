//! Calibration, coverage, scoring-rule and closure diagnostics.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::interval::Interval;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub nominal_levels: Vec<f64>,
    pub empirical_coverage: Vec<f64>,
    pub n_points: usize,
}

/// Fraction of `truths` inside the intervals, one interval list per level.
pub fn coverage_curve(levels: &[f64], intervals: &[Vec<Interval>], truths: &[f64]) -> Result<CoverageCurve> {
    if levels.is_empty() || truths.is_empty() {
        return Err(UqError::EmptyInput("coverage points"));
    }
    if levels.len() != intervals.len() {
        return Err(UqError::DimensionMismatch {
            expected: levels.len(),
            got: intervals.len(),
        });
    }
    let mut empirical = Vec::with_capacity(levels.len());
    for ivs in intervals {
        if ivs.len() != truths.len() {
            return Err(UqError::DimensionMismatch {
                expected: truths.len(),
                got: ivs.len(),
            });
        }
        let hits = ivs.iter().zip(truths).filter(|(iv, y)| iv.contains(**y)).count();
        empirical.push(hits as f64 / truths.len() as f64);
    }
    Ok(CoverageCurve {
        nominal_levels: levels.to_vec(),
        empirical_coverage: empirical,
        n_points: truths.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    FixedWidth,
    #[default]
    AdaptiveQuantile,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: usize,
    /// Fraction correct; 0 for an empty bin.
    pub acc: f64,
    /// Mean confidence; 0 for an empty bin.
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub mode: BinningMode,
    pub bins: Vec<BinStat>,
}

impl CalibrationBins {
    /// `sum_m |B_m|/n |acc_m - conf_m|`.
    pub fn ece(&self) -> f64 {
        let n: usize = self.bins.iter().map(|b| b.count).sum();
        if n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| b.count as f64 / n as f64 * (b.acc - b.conf).abs())
            .sum()
    }
}

/// Confidence (max probability) and argmax label, lowest index on ties.
pub fn top_label(probs: &[f64]) -> (f64, usize) {
    let mut best = (probs[0], 0);
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > best.0 {
            best = (p, k);
        }
    }
    best
}

/// Groups predictions into `m` bins. Adaptive bins hold equal counts (±1)
/// of confidence-sorted predictions; fixed bins split [0, 1] evenly.
pub fn calibration_bins(confidences: &[f64], correct: &[bool], m: usize, mode: BinningMode) -> Result<CalibrationBins> {
    if m == 0 {
        return Err(UqError::InvalidArgument("need at least one calibration bin".into()));
    }
    if confidences.len() != correct.len() {
        return Err(UqError::DimensionMismatch {
            expected: confidences.len(),
            got: correct.len(),
        });
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(UqError::InvalidArgument("confidences must lie in [0, 1]".into()));
    }
    let n = confidences.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    match mode {
        BinningMode::FixedWidth => {
            for (i, &c) in confidences.iter().enumerate() {
                members[((c * m as f64) as usize).min(m - 1)].push(i);
            }
        }
        BinningMode::AdaptiveQuantile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
            for (rank, i) in order.into_iter().enumerate() {
                members[rank * m / n.max(1)].push(i);
            }
        }
    }
    let bins = members
        .iter()
        .map(|idx| {
            if idx.is_empty() {
                return BinStat { count: 0, acc: 0.0, conf: 0.0 };
            }
            let k = idx.len() as f64;
            BinStat {
                count: idx.len(),
                acc: idx.iter().filter(|&&i| correct[i]).count() as f64 / k,
                conf: idx.iter().map(|&i| confidences[i]).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(CalibrationBins { mode, bins })
}

/// Binned reliability of top-label predictions.
pub fn reliability(probs: &[Vec<f64>], labels: &[usize], m: usize, mode: BinningMode) -> Result<CalibrationBins> {
    if probs.len() != labels.len() {
        return Err(UqError::DimensionMismatch {
            expected: probs.len(),
            got: labels.len(),
        });
    }
    let (conf, correct): (Vec<f64>, Vec<bool>) = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let (c, k) = top_label(p);
            (c, k == y)
        })
        .unzip();
    calibration_bins(&conf, &correct, m, mode)
}

pub fn ece(probs: &[Vec<f64>], labels: &[usize], m: usize, mode: BinningMode) -> Result<f64> {
    Ok(reliability(probs, labels, m, mode)?.ece())
}

/// Multiclass Brier score `1/N sum_i sum_c (p_ic - [y_i = c])^2`.
pub fn brier_score(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() {
        return Err(UqError::EmptyInput("Brier predictions"));
    }
    if probs.len() != labels.len() {
        return Err(UqError::DimensionMismatch {
            expected: probs.len(),
            got: labels.len(),
        });
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, pc)| (pc - if c == y { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Binary Brier score `1/N sum_i (p_i - y_i)^2` on the positive-class probability.
pub fn brier_binary(p_positive: &[f64], labels: &[usize]) -> Result<f64> {
    if p_positive.is_empty() {
        return Err(UqError::EmptyInput("Brier predictions"));
    }
    if p_positive.len() != labels.len() {
        return Err(UqError::DimensionMismatch {
            expected: p_positive.len(),
            got: labels.len(),
        });
    }
    Ok(p_positive
        .iter()
        .zip(labels)
        .map(|(p, &y)| (p - y as f64).powi(2))
        .sum::<f64>()
        / p_positive.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lppd {
    /// Mean log density, `-inf` if any density is zero.
    pub value: f64,
    pub zero_density: bool,
}

pub fn log_predictive_density(densities: &[f64]) -> Result<Lppd> {
    if densities.is_empty() {
        return Err(UqError::EmptyInput("predictive densities"));
    }
    if densities.iter().any(|d| !(*d >= 0.0)) {
        return Err(UqError::InvalidArgument("densities must be non-negative".into()));
    }
    if densities.contains(&0.0) {
        return Ok(Lppd {
            value: f64::NEG_INFINITY,
            zero_density: true,
        });
    }
    Ok(Lppd {
        value: densities.iter().map(|d| d.ln()).sum::<f64>() / densities.len() as f64,
        zero_density: false,
    })
}

/// Density at `y` of an equal-weight Gaussian mixture of `(mean, variance)` members.
pub fn gaussian_mixture_density(members: &[(f64, f64)], y: f64) -> f64 {
    members
        .iter()
        .map(|&(m, v)| (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
        .sum::<f64>()
        / members.len() as f64
}

/// `(mean - truth) / std` elementwise.
pub fn pulls(pred_means: &[f64], pred_stds: &[f64], truths: &[f64]) -> Result<Vec<f64>> {
    if pred_means.len() != pred_stds.len() || pred_means.len() != truths.len() {
        return Err(UqError::DimensionMismatch {
            expected: pred_means.len(),
            got: pred_stds.len().min(truths.len()),
        });
    }
    if pred_stds.iter().any(|s| !(*s > 0.0)) {
        return Err(UqError::InvalidArgument("pull standard deviations must be positive".into()));
    }
    Ok(pred_means
        .iter()
        .zip(pred_stds)
        .zip(truths)
        .map(|((m, s), y)| (m - y) / s)
        .collect())
}

/// Sample mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    /// Normalised bias `B^(k)` of each replica.
    pub bias: Vec<f64>,
    /// Mean of `bias`.
    pub r_b: f64,
    /// `(mean_k y~_i - y^_i) / sqrt(Sigma~_ii)`.
    pub pulls: Vec<f64>,
}

/// `B^(k) = (1/N) (y~^(k) - y^)^T Sigma~^{-1} (y~^(k) - y^)` for every replica.
pub fn closure_bias(replica_preds: &[Vec<f64>], central: &[f64], covariance: &DMatrix<f64>) -> Result<ClosureReport> {
    let n = central.len();
    if replica_preds.is_empty() || n == 0 {
        return Err(UqError::EmptyInput("closure replicas"));
    }
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(UqError::DimensionMismatch {
            expected: n,
            got: covariance.nrows(),
        });
    }
    if (covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax().max(1.0) {
        return Err(UqError::NotPositiveDefinite("closure covariance is not symmetric"));
    }
    let chol = Cholesky::new(covariance.clone()).ok_or(UqError::NotPositiveDefinite("closure covariance"))?;
    let l = chol.l();
    let mut bias = Vec::with_capacity(replica_preds.len());
    let mut sums = vec![0.0; n];
    for pred in replica_preds {
        if pred.len() != n {
            return Err(UqError::DimensionMismatch { expected: n, got: pred.len() });
        }
        let r = DVector::from_iterator(n, pred.iter().zip(central).map(|(a, b)| a - b));
        let z = l.solve_lower_triangular(&r).expect("positive Cholesky diagonal");
        bias.push(z.norm_squared() / n as f64);
        for (s, p) in sums.iter_mut().zip(pred) {
            *s += p;
        }
    }
    if bias.iter().any(|b| !b.is_finite()) {
        return Err(UqError::NonFinite("closure bias"));
    }
    let k = replica_preds.len() as f64;
    let pulls = (0..n)
        .map(|i| (sums[i] / k - central[i]) / covariance[(i, i)].sqrt())
        .collect();
    Ok(ClosureReport {
        r_b: bias.iter().sum::<f64>() / k,
        bias,
        pulls,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyDecomposition {
    /// Entropy of the averaged distribution.
    pub total: f64,
    /// Average entropy of the members.
    pub expected: f64,
    /// `total - expected`, clamped at zero when negative by rounding only.
    pub mutual_information: f64,
    pub mutual_information_raw: f64,
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn entropy_decomposition(member_probs: &[Vec<f64>]) -> Result<EntropyDecomposition> {
    let first = member_probs.first().ok_or(UqError::EmptyInput("member probabilities"))?;
    let c = first.len();
    for p in member_probs {
        if p.len() != c {
            return Err(UqError::DimensionMismatch { expected: c, got: p.len() });
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(UqError::InvalidArgument(format!("not a probability vector: {p:?}")));
        }
    }
    let m = member_probs.len() as f64;
    let mean: Vec<f64> = (0..c).map(|k| member_probs.iter().map(|p| p[k]).sum::<f64>() / m).collect();
    let total = entropy(&mean);
    let expected = member_probs.iter().map(|p| entropy(p)).sum::<f64>() / m;
    let raw = total - expected;
    let mutual_information = if raw < 0.0 && raw > -1e-12 { 0.0 } else { raw };
    Ok(EntropyDecomposition {
        total,
        expected,
        mutual_information,
        mutual_information_raw: raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn whole_line_and_point_intervals() {
        let truths = [0.1, -2.0, 3.5];
        let all = coverage_curve(&[0.9], &[vec![Interval::whole_line(); 3]], &truths).unwrap();
        assert_eq!(all.empirical_coverage, vec![1.0]);
        let none: Vec<Interval> = truths.iter().map(|t| Interval::new(t + 1.0, t + 1.0)).collect();
        assert_eq!(coverage_curve(&[0.5], &[none], &truths).unwrap().empirical_coverage, vec![0.0]);
        assert!(coverage_curve(&[0.5], &[vec![]], &[]).is_err());
    }

    #[test]
    fn confident_and_correct_has_zero_ece() {
        let probs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(ece(&probs, &[0, 1, 0], 10, BinningMode::AdaptiveQuantile).unwrap(), 0.0);
    }

    #[test]
    fn single_bin_gap() {
        let conf = vec![0.9; 10];
        let correct: Vec<bool> = (0..10).map(|i| i < 8).collect();
        let bins = calibration_bins(&conf, &correct, 1, BinningMode::FixedWidth).unwrap();
        assert!((bins.ece() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn adaptive_bins_hold_equal_counts() {
        let conf: Vec<f64> = (0..23).map(|i| (i as f64 * 0.37) % 1.0).collect();
        let bins = calibration_bins(&conf, &[true; 23], 5, BinningMode::AdaptiveQuantile).unwrap();
        let counts: Vec<usize> = bins.bins.iter().map(|b| b.count).collect();
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn ece_ignores_order() {
        let probs: Vec<Vec<f64>> = (0..40).map(|i| {
            let p = 0.5 + (i as f64 * 0.013) % 0.5;
            vec![p, 1.0 - p]
        }).collect();
        let labels: Vec<usize> = (0..40).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let a = ece(&probs, &labels, 10, BinningMode::AdaptiveQuantile).unwrap();
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        let p2: Vec<Vec<f64>> = idx.iter().map(|&i| probs[i].clone()).collect();
        let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let b = ece(&p2, &l2, 10, BinningMode::AdaptiveQuantile).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_score(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap(), 0.0);
        assert_eq!(brier_binary(&[0.5, 0.5, 0.5], &[0, 1, 1]).unwrap(), 0.25);
        let p = [0.2, 0.7, 0.9];
        let y = [0, 1, 0];
        let full: Vec<Vec<f64>> = p.iter().map(|q| vec![1.0 - q, *q]).collect();
        let two = brier_binary(&p, &y).unwrap();
        assert!((brier_score(&full, &y).unwrap() - 2.0 * two).abs() < 1e-15);
    }

    #[test]
    fn lppd_cases() {
        let d = (-0.5 * crate::special::LN_2PI).exp();
        assert!((log_predictive_density(&[d]).unwrap().value + 0.5 * crate::special::LN_2PI).abs() < 1e-15);
        let single = gaussian_mixture_density(&[(0.3, 2.0)], 1.0);
        let triple = gaussian_mixture_density(&[(0.3, 2.0); 3], 1.0);
        assert!((single - triple).abs() < 1e-15);
        let z = log_predictive_density(&[0.2, 0.0]).unwrap();
        assert!(z.zero_density && z.value == f64::NEG_INFINITY);
    }

    #[test]
    fn pull_scaling() {
        let p = pulls(&[1.0, 2.0], &[0.5, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(p, vec![2.0, 0.5]);
        let half = pulls(&[1.0, 2.0], &[1.0, 4.0], &[0.0, 1.0]).unwrap();
        assert_eq!(half, vec![1.0, 0.25]);
        assert_eq!(pulls(&[1.0], &[1.0], &[1.0]).unwrap(), vec![0.0]);
        assert!(pulls(&[1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn closure_of_exact_replicas_is_zero() {
        let central = vec![1.0, 2.0, 3.0];
        let cov = DMatrix::<f64>::identity(3, 3);
        let rep = closure_bias(&vec![central.clone(); 4], &central, &cov).unwrap();
        assert_eq!(rep.r_b, 0.0);
        assert!(rep.bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn closure_scales_inversely_with_covariance() {
        let central = vec![0.0, 0.0];
        let reps = vec![vec![1.0, -0.5], vec![0.3, 0.8]];
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let a = closure_bias(&reps, &central, &cov).unwrap().r_b;
        let b = closure_bias(&reps, &central, &(cov * 4.0)).unwrap().r_b;
        assert!((a - 4.0 * b).abs() < 1e-14);
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(closure_bias(&[vec![0.0, 0.0]], &[0.0, 0.0], &cov).is_err());
    }

    #[test]
    fn entropy_cases() {
        let same = entropy_decomposition(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        assert_eq!(same.mutual_information, 0.0);
        let split = entropy_decomposition(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((split.total - LN_2).abs() < 1e-15);
        assert_eq!(split.expected, 0.0);
        assert!((split.mutual_information - LN_2).abs() < 1e-15);
        let flat = entropy_decomposition(&vec![vec![1.0 / 3.0; 3]; 4]).unwrap();
        assert!((flat.total - 3f64.ln()).abs() < 1e-12);
        assert!(flat.mutual_information.abs() < 1e-12);
    }
}
