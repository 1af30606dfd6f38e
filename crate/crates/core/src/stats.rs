//! Monte Carlo estimates and the few statistical tests the checks need.

use serde::{Deserialize, Serialize};

/// Point estimate with its standard error and provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub seed: u64,
}

impl Estimate {
    /// Binomial proportion `hits / n`.
    pub fn proportion(hits: usize, n: usize, seed: u64) -> Self {
        let n_f = n.max(1) as f64;
        let p = hits as f64 / n_f;
        Estimate {
            point: p,
            std_error: (p * (1.0 - p) / n_f).sqrt(),
            replicas: n,
            seed,
        }
    }

    /// Sample mean with the usual standard error.
    pub fn mean(values: &[f64], seed: u64) -> Self {
        let (m, se) = mean_se(values);
        Estimate {
            point: m,
            std_error: se,
            replicas: values.len(),
            seed,
        }
    }

    /// `|self - other| <= k · sqrt(se₁² + se₂²)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.point - other.point).abs() <= k * self.combined_se(other)
    }

    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// `|self - target| <= k · se`, with a floor for degenerate zero-variance
    /// estimates.
    pub fn within(&self, target: f64, k: f64) -> bool {
        within_sigmas(self.point, target, self.std_error, k)
    }
}

pub fn within_sigmas(point: f64, target: f64, se: f64, k: f64) -> bool {
    (point - target).abs() <= k * se + 1e-12
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Two-sample Kolmogorov–Smirnov test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        // step past every copy of x in both samples before comparing, so ties
        // do not inflate the statistic
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    let p = kolmogorov_q((sq + 0.12 + 0.11 / sq) * d);
    KsResult { statistic: d, p_value: p }
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let a = -2.0 * lambda * lambda;
    let mut prev = 0.0f64;
    for k in 1..=200 {
        let term = sign * 2.0 * (a * (k * k) as f64).exp();
        sum += term;
        if term.abs() <= 1e-12 * prev.abs() || term.abs() < 1e-300 {
            return sum.clamp(0.0, 1.0);
        }
        prev = term;
        sign = -sign;
    }
    1.0
}
