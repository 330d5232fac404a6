//! Statistical helpers: streaming moments, Chernoff thresholds, two-sample
//! Kolmogorov–Smirnov, least squares and bootstrap medians.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

/// Two-sided tail probability of a 3σ normal deviation.
pub const THREE_SIGMA_ALPHA: f64 = 0.002_699_796_063_260_2;

/// Running mean and variance (Welford), mergeable with Chan's update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &MeanVar) -> MeanVar {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        MeanVar { count: n, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for MeanVar {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut mv = MeanVar::new();
        for x in iter {
            mv.push(x);
        }
        mv
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
pub fn within_sigma(a: f64, b: f64, se_a: f64, se_b: f64, k: f64) -> bool {
    (a - b).abs() <= k * (se_a * se_a + se_b * se_b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    Upper,
    Lower,
}

/// Deviation at which the Poisson Chernoff bound reaches a requested tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffThreshold {
    /// Relative deviation `eps`.
    pub epsilon: f64,
    /// Absolute deviation `eps * mean`.
    pub deviation: f64,
    /// `(1 - eps) * mean` (lower) or `(1 + eps) * mean` (upper).
    pub threshold: f64,
    /// True when no `eps < 1` reaches the tail probability; `eps` is then 1.
    pub saturated: bool,
}

impl ChernoffThreshold {
    /// Integer count on the safe side of the threshold.
    pub fn count(&self, tail: Tail) -> u64 {
        match tail {
            Tail::Lower => self.threshold.floor().max(0.0) as u64,
            Tail::Upper => self.threshold.ceil() as u64,
        }
    }
}

/// Lower-tail exponent `mean * eps^2 / 2`.
pub fn chernoff_lower_exponent(mean: f64, eps: f64) -> f64 {
    mean * eps * eps / 2.0
}

/// Upper-tail exponent `mean * eps^2 / 2 * (1 - eps / 3)`.
pub fn chernoff_upper_exponent(mean: f64, eps: f64) -> f64 {
    mean * eps * eps / 2.0 * (1.0 - eps / 3.0)
}

/// Smallest relative deviation `eps` for which the Poisson Chernoff bound
/// `P[P >= (1+eps) mean] <= exp(-mean eps^2 (1 - eps/3) / 2)` (upper) or
/// `P[P <= (1-eps) mean] <= exp(-mean eps^2 / 2)` (lower) is at most `tail_prob`.
pub fn chernoff_poisson_threshold(mean: f64, tail_prob: f64, side: Tail) -> crate::Result<ChernoffThreshold> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(crate::error::invalid("mean must be positive"));
    }
    if !(tail_prob > 0.0 && tail_prob <= 1.0) {
        return Err(crate::error::invalid("tail probability must lie in (0, 1]"));
    }
    let target = -tail_prob.ln();
    let (epsilon, saturated) = match side {
        Tail::Lower => {
            let eps = (2.0 * target / mean).sqrt();
            if eps >= 1.0 {
                (1.0, eps > 1.0)
            } else {
                (eps, false)
            }
        }
        Tail::Upper => {
            if chernoff_upper_exponent(mean, 1.0) < target {
                (1.0, true)
            } else {
                // exponent is increasing on (0, 1)
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if chernoff_upper_exponent(mean, mid) >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                (hi, false)
            }
        }
    };
    let epsilon = if target == 0.0 { 0.0 } else { epsilon };
    let threshold = match side {
        Tail::Lower => (1.0 - epsilon) * mean,
        Tail::Upper => (1.0 + epsilon) * mean,
    };
    Ok(ChernoffThreshold {
        epsilon,
        deviation: epsilon * mean,
        threshold,
        saturated,
    })
}

/// Result of a two-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Critical value of the statistic at the 3σ level.
    pub critical: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic <= self.critical
    }
}

/// Kolmogorov distribution survival function `Q(x) = 2 Σ (-1)^{k-1} exp(-2 k² x²)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test. Infinite values (censored observations) are allowed and
/// compare equal to each other.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < n && x[i] == v {
            i += 1;
        }
        while j < m && y[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    let c_alpha = (-(THREE_SIGMA_ALPHA / 2.0).ln() / 2.0).sqrt();
    KsResult {
        statistic: d,
        p_value,
        critical: c_alpha / sq,
    }
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let ss_res: f64 = residuals.iter().map(|e| e * e).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
        residuals,
    }
}

/// Median of a sample (midpoint of the two central order statistics).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Bootstrap standard error of the median.
pub fn median_bootstrap_se(xs: &[f64], resamples: usize, rng: &mut StreamRng) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf = vec![0.0; n];
    let meds: MeanVar = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..n)];
            }
            median(&buf)
        })
        .collect();
    meds.variance().sqrt()
}

/// Empirical quantile (nearest rank, `q` in [0, 1]).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Poisson mean/variance check of a count sample at `k` standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMomentTest {
    pub expected: f64,
    pub mean: f64,
    pub variance: f64,
    pub mean_z: f64,
    pub variance_z: f64,
    pub samples: usize,
}

impl PoissonMomentTest {
    pub fn passes(&self, k: f64) -> bool {
        self.mean_z.abs() <= k && self.variance_z.abs() <= k
    }
}

pub fn poisson_moment_test(counts: &[f64], expected: f64) -> PoissonMomentTest {
    let mv: MeanVar = counts.iter().copied().collect();
    let n = counts.len().max(1) as f64;
    let se_mean = (expected / n).sqrt();
    // Var of the sample variance for Poisson(mu): (mu + 2 mu^2) / n to leading order
    let se_var = ((expected + 2.0 * expected * expected) / n).sqrt();
    let z = |diff: f64, se: f64| if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    PoissonMomentTest {
        expected,
        mean: mv.mean,
        variance: mv.variance(),
        mean_z: z(mv.mean - expected, se_mean),
        variance_z: z(mv.variance() - expected, se_var),
        samples: counts.len(),
    }
}

/// Sample Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TrialKey;

    #[test]
    fn meanvar_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let all: MeanVar = xs.iter().copied().collect();
        let a: MeanVar = xs[..37].iter().copied().collect();
        let b: MeanVar = xs[37..].iter().copied().collect();
        let m = a.merge(&b);
        assert_eq!(m.count, all.count);
        assert!((m.mean - all.mean).abs() < 1e-14);
        assert!((m.variance() - all.variance()).abs() < 1e-13);
    }

    #[test]
    fn chernoff_lower_inverts_exactly() {
        let t = chernoff_poisson_threshold(100.0, (-12.5f64).exp(), Tail::Lower).unwrap();
        assert!((t.epsilon - 0.5).abs() < 1e-12);
        assert!((t.threshold - 50.0).abs() < 1e-9);
        assert_eq!(t.count(Tail::Lower), 50);
    }

    #[test]
    fn chernoff_upper_inverts_exactly() {
        // exp(-10 * 0.5^2 / 2 * (1 - 0.5/3))
        let tail = (-(10.0 * 0.25 / 2.0) * (1.0 - 1.0 / 6.0f64)).exp();
        let t = chernoff_poisson_threshold(10.0, tail, Tail::Upper).unwrap();
        assert!((t.epsilon - 0.5).abs() < 1e-9, "{t:?}");
        assert!((t.threshold - 15.0).abs() < 1e-8);
    }

    #[test]
    fn chernoff_vacuous_tail_gives_zero() {
        for side in [Tail::Lower, Tail::Upper] {
            let t = chernoff_poisson_threshold(7.0, 1.0, side).unwrap();
            assert_eq!(t.epsilon, 0.0);
            assert_eq!(t.deviation, 0.0);
        }
    }

    #[test]
    fn chernoff_saturates_for_tiny_means() {
        let t = chernoff_poisson_threshold(1.0, 1e-9, Tail::Upper).unwrap();
        assert!(t.saturated);
        assert_eq!(t.epsilon, 1.0);
    }

    #[test]
    fn ks_identical_samples() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert!(r.passes());
    }

    #[test]
    fn ks_detects_shift_and_handles_infinity() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.3).abs() < 0.002);
        assert!(!r.passes());
        let c = vec![1.0, f64::INFINITY, f64::INFINITY];
        let d = vec![f64::INFINITY, 1.0, f64::INFINITY];
        assert_eq!(ks_two_sample(&c, &d).statistic, 0.0);
    }

    #[test]
    fn kolmogorov_q_reference_values() {
        // Q(1.36) ≈ 0.0494, Q(1.0) ≈ 0.2700
        assert!((kolmogorov_q(1.36) - 0.04945).abs() < 1e-3);
        assert!((kolmogorov_q(1.0) - 0.26999).abs() < 1e-3);
    }

    #[test]
    fn regression_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let f = linear_regression(&x, &y);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_and_bootstrap() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let xs: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let se = median_bootstrap_se(&xs, 200, &mut TrialKey::new(0, 0).stream(1));
        assert!(se > 0.0 && se < 20.0);
    }

    #[test]
    fn poisson_test_on_exact_moments() {
        // counts 0,2 alternating: mean 1, variance ~1
        let counts: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let t = poisson_moment_test(&counts, 1.0);
        assert!(t.mean_z.abs() < 1e-12);
        assert!(t.variance_z.abs() < 0.1);
    }
}
