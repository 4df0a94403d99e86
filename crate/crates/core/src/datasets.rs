//! Synthetic benchmark data: gapped 1-D regression, two moons with a
//! removed centre box, and Gaussian replica batches.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::nn::Data;
use crate::rng::RngStream;

/// Training inputs for the regression benchmark lie in this interval.
pub const TRAIN_INTERVAL: (f64, f64) = (-3.0, 3.0);
/// Extrapolation inputs lie outside the training interval up to these bounds.
pub const FULL_DOMAIN: (f64, f64) = (-5.0, 5.0);

/// `x sin(2x)`.
pub fn regression_target(x: f64) -> f64 {
    x * (2.0 * x).sin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionDataConfig {
    pub n_train: usize,
    pub noise_std: f64,
    pub n_test_in_domain: usize,
    pub n_test_extrapolation: usize,
}

impl Default for RegressionDataConfig {
    fn default() -> Self {
        Self {
            n_train: 60,
            noise_std: 0.3,
            n_test_in_domain: 500,
            n_test_extrapolation: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub train: Data,
    pub test_in_domain: Data,
    /// Inputs in `[-5, -3)` and `(3, 5]`.
    pub test_extrapolation: Data,
    pub noise_std: f64,
}

impl RegressionDataset {
    /// In-domain and extrapolation test points together.
    pub fn test_full_domain(&self) -> Data {
        let mut d = self.test_in_domain.clone();
        d.xs.extend(self.test_extrapolation.xs.iter().cloned());
        d.ys.extend(&self.test_extrapolation.ys);
        d
    }
}

fn noisy_points(xs: Vec<f64>, noise_std: f64, rng: &mut RngStream) -> Data {
    let ys = xs.iter().map(|&x| regression_target(x) + noise_std * rng.next_normal()).collect();
    Data::new(xs.into_iter().map(|x| vec![x]).collect(), ys)
}

fn uniform_in(lo: f64, hi: f64, rng: &mut RngStream) -> f64 {
    lo + (hi - lo) * rng.next_uniform()
}

pub fn make_regression(cfg: &RegressionDataConfig, rng: &mut RngStream) -> Result<RegressionDataset> {
    if cfg.n_train < 2 {
        return Err(UqError::InvalidArgument("regression data needs n_train >= 2".into()));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(UqError::InvalidArgument("noise_std must be non-negative".into()));
    }
    let (lo, hi) = TRAIN_INTERVAL;
    let (dlo, dhi) = FULL_DOMAIN;
    let train_x = (0..cfg.n_train).map(|_| uniform_in(lo, hi, rng)).collect();
    let train = noisy_points(train_x, cfg.noise_std, rng);
    let in_x = (0..cfg.n_test_in_domain).map(|_| uniform_in(lo, hi, rng)).collect();
    let test_in_domain = noisy_points(in_x, cfg.noise_std, rng);
    let width = (lo - dlo) + (dhi - hi);
    let out_x = (0..cfg.n_test_extrapolation)
        .map(|_| loop {
            let u = uniform_in(0.0, width, rng);
            let x = if u < lo - dlo { dlo + u } else { hi + (width - u) };
            if x < lo || x > hi {
                break x;
            }
        })
        .collect();
    let test_extrapolation = noisy_points(out_x, cfg.noise_std, rng);
    Ok(RegressionDataset {
        train,
        test_in_domain,
        test_extrapolation,
        noise_std: cfg.noise_std,
    })
}

/// Axis-aligned rectangle `[x_lo, x_hi] x [y_lo, y_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl BoxRegion {
    pub fn contains(&self, p: &[f64]) -> bool {
        (self.x_lo..=self.x_hi).contains(&p[0]) && (self.y_lo..=self.y_hi).contains(&p[1])
    }

    pub fn is_empty(&self) -> bool {
        !(self.x_lo < self.x_hi && self.y_lo < self.y_hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoonsConfig {
    pub n: usize,
    pub noise: f64,
    /// No points are removed when absent.
    pub excluded_box: Option<BoxRegion>,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self {
            n: 400,
            noise: 0.1,
            excluded_box: Some(BoxRegion {
                x_lo: 0.0,
                x_hi: 1.0,
                y_lo: -0.3,
                y_hi: 0.5,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoonsDataset {
    /// Points with labels 0 (upper moon) and 1 (lower moon).
    pub data: Data,
    pub excluded_box: Option<BoxRegion>,
}

/// Point on moon `label` at angle `t` in `[0, pi]`, before jitter.
pub fn moon_point(label: usize, t: f64) -> [f64; 2] {
    if label == 0 {
        [t.cos(), t.sin()]
    } else {
        [1.0 - t.cos(), 0.5 - t.sin()]
    }
}

/// Two interleaving half circles. The first `n / 2` points are class 0.
/// Points falling in the excluded box are redrawn.
pub fn make_two_moons(cfg: &MoonsConfig, rng: &mut RngStream) -> Result<MoonsDataset> {
    if cfg.n < 2 {
        return Err(UqError::InvalidArgument("two moons needs n >= 2".into()));
    }
    let region = cfg.excluded_box.filter(|b| !b.is_empty());
    let max_attempts = 20 * cfg.n;
    let mut attempts = 0;
    let mut xs = Vec::with_capacity(cfg.n);
    let mut ys = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let label = usize::from(i >= cfg.n / 2);
        loop {
            attempts += 1;
            if attempts > max_attempts {
                return Err(UqError::InvalidArgument(format!(
                    "excluded box rejects over 95% of two-moons draws: {region:?}"
                )));
            }
            let t = std::f64::consts::PI * rng.next_uniform();
            let [px, py] = moon_point(label, t);
            let p = vec![px + cfg.noise * rng.next_normal(), py + cfg.noise * rng.next_normal()];
            if region.is_none_or(|b| !b.contains(&p)) {
                xs.push(p);
                ys.push(label as f64);
                break;
            }
        }
    }
    Ok(MoonsDataset {
        data: Data::new(xs, ys),
        excluded_box: region,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaBatch {
    pub central: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub replicas: Vec<Vec<f64>>,
}

/// `K` draws of `central + L z` with `L L^T = covariance`.
pub fn make_replicas(central: &[f64], covariance: &DMatrix<f64>, k: usize, rng: &mut RngStream) -> Result<ReplicaBatch> {
    let n = central.len();
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(UqError::DimensionMismatch {
            expected: n,
            got: covariance.nrows(),
        });
    }
    let l = Cholesky::new(covariance.clone())
        .ok_or(UqError::NotPositiveDefinite("replica covariance"))?
        .l();
    let mu = DVector::from_column_slice(central);
    let replicas = (0..k)
        .map(|_| {
            let z = DVector::from_vec(rng.normal_vec(n));
            (&mu + &l * z).as_slice().to_vec()
        })
        .collect();
    Ok(ReplicaBatch {
        central: central.to_vec(),
        covariance: covariance.clone(),
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_regression_lies_on_target() {
        let cfg = RegressionDataConfig {
            noise_std: 0.0,
            ..Default::default()
        };
        let d = make_regression(&cfg, &mut RngStream::new(1)).unwrap();
        for (x, y) in d.train.xs.iter().zip(&d.train.ys) {
            assert_eq!(*y, regression_target(x[0]));
        }
    }

    #[test]
    fn regression_domains() {
        let d = make_regression(&RegressionDataConfig::default(), &mut RngStream::new(2)).unwrap();
        assert!(d.train.xs.iter().chain(&d.test_in_domain.xs).all(|x| (-3.0..=3.0).contains(&x[0])));
        assert!(d
            .test_extrapolation
            .xs
            .iter()
            .all(|x| (x[0] < -3.0 && x[0] >= -5.0) || (x[0] > 3.0 && x[0] <= 5.0)));
        assert_eq!(d.test_full_domain().len(), 1000);
    }

    #[test]
    fn regression_noise_level() {
        let cfg = RegressionDataConfig {
            n_train: 10_000,
            ..Default::default()
        };
        let d = make_regression(&cfg, &mut RngStream::new(3)).unwrap();
        let res: Vec<f64> = d.train.xs.iter().zip(&d.train.ys).map(|(x, y)| y - regression_target(x[0])).collect();
        let n = res.len() as f64;
        let m = res.iter().sum::<f64>() / n;
        let sd = (res.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / 0.3 - 1.0).abs() < 0.05, "{sd}");
    }

    #[test]
    fn noiseless_moons_lie_on_arcs_outside_box() {
        let cfg = MoonsConfig {
            noise: 0.0,
            ..Default::default()
        };
        let d = make_two_moons(&cfg, &mut RngStream::new(4)).unwrap();
        let b = cfg.excluded_box.unwrap();
        for (p, &y) in d.data.xs.iter().zip(&d.data.ys) {
            assert!(!b.contains(p));
            let (cx, cy) = if y == 0.0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moons_are_balanced() {
        let d = make_two_moons(&MoonsConfig::default(), &mut RngStream::new(5)).unwrap();
        let ones = d.data.ys.iter().filter(|y| **y == 1.0).count();
        assert!((ones as f64 - 200.0).abs() <= 20.0);
    }

    #[test]
    fn plain_moons_keep_box_points() {
        let cfg = MoonsConfig {
            n: 2000,
            excluded_box: None,
            ..Default::default()
        };
        let d = make_two_moons(&cfg, &mut RngStream::new(6)).unwrap();
        let b = MoonsConfig::default().excluded_box.unwrap();
        assert!(d.data.xs.iter().any(|p| b.contains(p)));
    }

    #[test]
    fn box_covering_everything_is_rejected() {
        let cfg = MoonsConfig {
            excluded_box: Some(BoxRegion {
                x_lo: -10.0,
                x_hi: 10.0,
                y_lo: -10.0,
                y_hi: 10.0,
            }),
            ..Default::default()
        };
        assert!(make_two_moons(&cfg, &mut RngStream::new(7)).is_err());
    }

    #[test]
    fn tiny_covariance_replicas_hug_the_centre() {
        let central = vec![1.0, -2.0, 0.5];
        let cov = DMatrix::<f64>::identity(3, 3) * 1e-12;
        let b = make_replicas(&central, &cov, 20, &mut RngStream::new(8)).unwrap();
        for r in &b.replicas {
            for (a, c) in r.iter().zip(&central) {
                assert!((a - c).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn replica_covariance_matches() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let b = make_replicas(&[0.0, 0.0], &cov, 10_000, &mut RngStream::new(9)).unwrap();
        let n = b.replicas.len() as f64;
        let mut s = [[0.0; 2]; 2];
        for r in &b.replicas {
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += r[i] * r[j] / n;
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n).sqrt();
                assert!((s[i][j] - cov[(i, j)]).abs() < 4.0 * se, "{s:?}");
            }
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = make_two_moons(&MoonsConfig::default(), &mut RngStream::new(10)).unwrap();
        let b = make_two_moons(&MoonsConfig::default(), &mut RngStream::new(10)).unwrap();
        assert_eq!(a, b);
        let cov = DMatrix::<f64>::identity(2, 2);
        let r1 = make_replicas(&[0.0, 1.0], &cov, 5, &mut RngStream::new(11)).unwrap();
        let r2 = make_replicas(&[0.0, 1.0], &cov, 5, &mut RngStream::new(11)).unwrap();
        assert_eq!(r1, r2);
    }
}
