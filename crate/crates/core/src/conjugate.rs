//! Exact Beta-Bernoulli inference and the closed-form frequentist tools
//! that sit next to it: credible intervals, the Laplace and asymptotic
//! normal approximations, the known-variance Gaussian-mean confidence
//! interval, and the McAllester PAC-Bayes complexity term.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::interval::Interval;
use crate::special::{beta_reg, ln_gamma, std_normal_quantile};

/// Grid resolution for highest-density intervals.
pub const HPD_GRID_POINTS: usize = 100_000;
/// Absolute tolerance of the Beta quantile bisection.
pub const QUANTILE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BernoulliData {
    pub n: u64,
    pub k: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    EqualTailed,
    Hpd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub kind: IntervalKind,
}

/// Gaussian `N(mean, variance)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalApprox {
    pub mean: f64,
    pub variance: f64,
}

impl NormalApprox {
    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.mean).powi(2) / (2.0 * self.variance)).exp()
            / (2.0 * std::f64::consts::PI * self.variance).sqrt()
    }
}

impl BernoulliData {
    pub fn new(n: u64, k: u64) -> Result<Self> {
        if k > n {
            return Err(UqError::InvalidArgument(format!(
                "successes k = {k} exceed trials n = {n}"
            )));
        }
        Ok(Self { n, k })
    }
}

impl BetaPosterior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(UqError::InvalidArgument(format!(
                "Beta shapes must be positive, got ({a}, {b})"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        let ln_beta = ln_gamma(self.a) + ln_gamma(self.b) - ln_gamma(self.a + self.b);
        let left = if self.a == 1.0 { 0.0 } else { (self.a - 1.0) * x.ln() };
        let right = if self.b == 1.0 { 0.0 } else { (self.b - 1.0) * (1.0 - x).ln() };
        left + right - ln_beta
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.a, self.b, x)
        }
    }

    /// Quantile by bisection on the regularized incomplete beta function.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn beta_update(prior: BetaPosterior, data: BernoulliData) -> BetaPosterior {
    BetaPosterior {
        a: prior.a + data.k as f64,
        b: prior.b + (data.n - data.k) as f64,
    }
}

pub fn bernoulli_mle(data: BernoulliData) -> Result<f64> {
    if data.n == 0 {
        return Err(UqError::EmptyInput("Bernoulli sample"));
    }
    Ok(data.k as f64 / data.n as f64)
}

pub fn bernoulli_fisher_information(theta: f64) -> f64 {
    1.0 / (theta * (1.0 - theta))
}

/// Asymptotic normal law of the posterior: centred at the MLE with variance
/// `1 / (n I(theta0))`.
pub fn bvm_normal_approx(data: BernoulliData, theta0: f64) -> Result<NormalApprox> {
    if !(theta0 > 0.0 && theta0 < 1.0) {
        return Err(UqError::InvalidArgument(format!(
            "theta0 must lie in (0, 1), got {theta0}"
        )));
    }
    let mean = bernoulli_mle(data)?;
    Ok(NormalApprox {
        mean,
        variance: 1.0 / (data.n as f64 * bernoulli_fisher_information(theta0)),
    })
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(UqError::InvalidArgument(format!(
            "credible level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

pub fn credible_interval(post: BetaPosterior, level: f64, kind: IntervalKind) -> Result<CredibleInterval> {
    check_level(level)?;
    let (lo, hi) = match kind {
        IntervalKind::EqualTailed => {
            let tail = 0.5 * (1.0 - level);
            (post.quantile(tail), post.quantile(1.0 - tail))
        }
        IntervalKind::Hpd => hpd_bounds(post, level)?,
    };
    Ok(CredibleInterval { lo, hi, level, kind })
}

/// Highest-density interval by thresholding the density on a uniform grid,
/// then widening cell by cell until the exact mass reaches `level`.
fn hpd_bounds(post: BetaPosterior, level: f64) -> Result<(f64, f64)> {
    if post.a < 1.0 || post.b < 1.0 {
        return Err(UqError::InvalidArgument(
            "HPD intervals need a unimodal density (a >= 1 and b >= 1)".into(),
        ));
    }
    if post.a == 1.0 && post.b == 1.0 {
        let tail = 0.5 * (1.0 - level);
        return Ok((tail, 1.0 - tail));
    }
    let n = HPD_GRID_POINTS;
    let dx = 1.0 / n as f64;
    let dens: Vec<f64> = (0..n).map(|i| post.pdf((i as f64 + 0.5) * dx)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dens[j].total_cmp(&dens[i]).then(i.cmp(&j)));
    let mut mass = 0.0;
    let (mut first, mut last) = (n, 0);
    for &i in &order {
        mass += dens[i] * dx;
        first = first.min(i);
        last = last.max(i);
        if mass >= level {
            break;
        }
    }
    let edge = |i: usize| i as f64 * dx;
    let exact = |f: usize, l: usize| post.cdf(edge(l + 1)) - post.cdf(edge(f));
    while exact(first, last) < level && (first > 0 || last + 1 < n) {
        let left = if first > 0 { dens[first - 1] } else { f64::NEG_INFINITY };
        let right = if last + 1 < n { dens[last + 1] } else { f64::NEG_INFINITY };
        if left >= right {
            first -= 1;
        } else {
            last += 1;
        }
    }
    Ok((edge(first), edge(last + 1)))
}

/// Mode and variance of the Gaussian matched to the curvature of the log
/// density at its interior mode.
pub fn laplace_beta(post: BetaPosterior) -> Result<NormalApprox> {
    if post.a <= 1.0 || post.b <= 1.0 {
        return Err(UqError::BoundaryMode { a: post.a, b: post.b });
    }
    let mode = (post.a - 1.0) / (post.a + post.b - 2.0);
    let curvature = (post.a - 1.0) / (mode * mode) + (post.b - 1.0) / ((1.0 - mode) * (1.0 - mode));
    Ok(NormalApprox {
        mean: mode,
        variance: 1.0 / curvature,
    })
}

/// Known-variance interval `mean ± z_{1-delta/2} sigma / sqrt(N)`.
pub fn gaussian_mean_ci(xs: &[f64], sigma: f64, level: f64) -> Result<Interval> {
    if xs.is_empty() {
        return Err(UqError::EmptyInput("sample for confidence interval"));
    }
    if !(sigma > 0.0) {
        return Err(UqError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    check_level(level)?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let z = std_normal_quantile(1.0 - 0.5 * (1.0 - level));
    Ok(Interval::centered(mean, z * sigma / n.sqrt()))
}

/// Complexity term `sqrt((KL + ln(2 sqrt(n) / delta)) / (2 n))`.
pub fn mcallester_bound(kl: f64, n: u64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(UqError::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if n == 0 {
        return Err(UqError::InvalidArgument("n must be at least 1".into()));
    }
    if !(kl >= 0.0) {
        return Err(UqError::InvalidArgument(format!("KL must be non-negative, got {kl}")));
    }
    let n = n as f64;
    Ok(((kl + (2.0 * n.sqrt() / delta).ln()) / (2.0 * n)).sqrt())
}

/// `KL(q || p)` between diagonal Gaussians.
pub fn kl_diag_gaussians(mu_q: &[f64], var_q: &[f64], mu_p: &[f64], var_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    for len in [var_q.len(), mu_p.len(), var_p.len()] {
        if len != n {
            return Err(UqError::DimensionMismatch { expected: n, got: len });
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        let (vq, vp) = (var_q[i], var_p[i]);
        if !(vq > 0.0 && vp > 0.0) {
            return Err(UqError::InvalidArgument("variances must be positive".into()));
        }
        kl += 0.5 * (vq / vp + (mu_q[i] - mu_p[i]).powi(2) / vp - 1.0 + (vp / vq).ln());
    }
    Ok(kl)
}

/// Total variation distance `0.5 ∫ |f - g|` over `[0, 1]` with the
/// trapezoidal rule on `points` uniformly spaced nodes.
pub fn total_variation_unit_interval(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, points: usize) -> f64 {
    assert!(points >= 2);
    let dx = 1.0 / (points - 1) as f64;
    let vals: Vec<f64> = (0..points)
        .map(|i| {
            let x = i as f64 * dx;
            (f(x) - g(x)).abs()
        })
        .collect();
    let interior: f64 = vals[1..points - 1].iter().sum();
    0.5 * dx * (interior + 0.5 * (vals[0] + vals[points - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta(a: f64, b: f64) -> BetaPosterior {
        BetaPosterior::new(a, b).unwrap()
    }

    #[test]
    fn beta_update_examples() {
        let post = beta_update(beta(2.0, 2.0), BernoulliData::new(10, 4).unwrap());
        assert_eq!((post.a, post.b), (6.0, 8.0));
        let post = beta_update(beta(2.0, 2.0), BernoulliData::new(0, 0).unwrap());
        assert_eq!((post.a, post.b), (2.0, 2.0));
        let post = beta_update(beta(1.0, 1.0), BernoulliData::new(3, 3).unwrap());
        assert_eq!((post.a, post.b), (4.0, 1.0));
    }

    #[test]
    fn invalid_data_rejected() {
        assert!(BernoulliData::new(3, 4).is_err());
        assert!(BetaPosterior::new(0.0, 1.0).is_err());
    }

    #[test]
    fn mle_examples() {
        assert_eq!(bernoulli_mle(BernoulliData { n: 10, k: 4 }).unwrap(), 0.4);
        assert_eq!(bernoulli_mle(BernoulliData { n: 5, k: 0 }).unwrap(), 0.0);
        assert_eq!(bernoulli_mle(BernoulliData { n: 7, k: 7 }).unwrap(), 1.0);
        assert!(bernoulli_mle(BernoulliData { n: 0, k: 0 }).is_err());
    }

    #[test]
    fn bvm_examples() {
        let a = bvm_normal_approx(BernoulliData { n: 100, k: 50 }, 0.5).unwrap();
        assert!((a.mean - 0.5).abs() < 1e-15);
        assert!((a.variance - 0.0025).abs() < 1e-15);
        let a = bvm_normal_approx(BernoulliData { n: 10_000, k: 3_500 }, 0.35).unwrap();
        assert!((a.variance - 2.275e-5).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for n in [10u64, 100, 1000, 100_000] {
            let v = bvm_normal_approx(BernoulliData { n, k: n / 5 }, 0.2).unwrap().variance;
            assert!(v < prev);
            prev = v;
        }
        assert!(bvm_normal_approx(BernoulliData { n: 10, k: 3 }, 0.0).is_err());
        assert!(bvm_normal_approx(BernoulliData { n: 10, k: 3 }, 1.0).is_err());
    }

    #[test]
    fn uniform_equal_tailed() {
        let ci = credible_interval(beta(1.0, 1.0), 0.9, IntervalKind::EqualTailed).unwrap();
        assert!((ci.lo - 0.05).abs() < 1e-9 && (ci.hi - 0.95).abs() < 1e-9);
    }

    #[test]
    fn symmetric_hpd_matches_equal_tailed() {
        let post = beta(5.0, 5.0);
        let et = credible_interval(post, 0.9, IntervalKind::EqualTailed).unwrap();
        let hpd = credible_interval(post, 0.9, IntervalKind::Hpd).unwrap();
        assert!((et.lo - hpd.lo).abs() < 1e-3, "{et:?} {hpd:?}");
        assert!((et.hi - hpd.hi).abs() < 1e-3);
    }

    #[test]
    fn hpd_never_wider_and_has_mass() {
        let post = beta(2.0, 8.0);
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let et = credible_interval(post, level, IntervalKind::EqualTailed).unwrap();
            let hpd = credible_interval(post, level, IntervalKind::Hpd).unwrap();
            assert!(hpd.hi - hpd.lo <= et.hi - et.lo + 1e-9, "level {level}");
            assert!(post.cdf(hpd.hi) - post.cdf(hpd.lo) >= level - 1e-6);
            assert!(post.cdf(et.hi) - post.cdf(et.lo) >= level - 1e-6);
        }
    }

    #[test]
    fn invalid_levels() {
        assert!(credible_interval(beta(2.0, 2.0), 1.0, IntervalKind::Hpd).is_err());
        assert!(credible_interval(beta(2.0, 2.0), 0.0, IntervalKind::EqualTailed).is_err());
    }

    #[test]
    fn laplace_examples() {
        let la = laplace_beta(beta(2.0, 2.0)).unwrap();
        assert!((la.mean - 0.5).abs() < 1e-15 && (la.variance - 0.125).abs() < 1e-15);
        assert_eq!(laplace_beta(beta(3.0, 3.0)).unwrap().mean, 0.5);
        assert!(matches!(
            laplace_beta(beta(1.0, 5.0)),
            Err(UqError::BoundaryMode { .. })
        ));
    }

    #[test]
    fn gaussian_ci_examples() {
        let ci = gaussian_mean_ci(&[0.0; 4], 1.0, 0.95).unwrap();
        assert!((ci.hi - 0.979_982).abs() < 1e-5 && (ci.lo + 0.979_982).abs() < 1e-5);
        let wide = gaussian_mean_ci(&[0.0; 4], 1.0, 0.999_999).unwrap();
        assert!(wide.width() > ci.width() * 2.0);
        let many = gaussian_mean_ci(&vec![0.0; 40_000], 1.0, 0.95).unwrap();
        assert!(many.width() < ci.width() / 50.0);
        assert!(gaussian_mean_ci(&[], 1.0, 0.95).is_err());
    }

    #[test]
    fn mcallester_examples() {
        let b = mcallester_bound(0.0, 100, 0.05).unwrap();
        assert!((b - 0.173_082).abs() < 1e-6, "{b}");
        assert!(mcallester_bound(1.0, 1_000_000, 0.05).unwrap() < mcallester_bound(1.0, 100, 0.05).unwrap());
        assert!(mcallester_bound(2.0, 100, 0.05).unwrap() > b);
        assert!(mcallester_bound(0.0, 100, 0.1).unwrap() < b);
        assert!(mcallester_bound(0.0, 100, 0.0).is_err());
        assert!(mcallester_bound(0.0, 100, 1.5).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag_gaussians(&[0.3], &[2.0], &[0.3], &[2.0]).unwrap(), 0.0);
        assert!((kl_diag_gaussians(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_diag_gaussians(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }
}
