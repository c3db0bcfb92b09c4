//! Small statistical helpers for acceptance bands.

use serde::Serialize;

/// Standard error of a binomial frequency.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// `|observed − expected|` in units of the binomial standard error at `expected`.
pub fn sigma_distance(observed: f64, expected: f64, n: u64) -> f64 {
    let s = binomial_sigma(expected, n);
    if s == 0.0 {
        if observed == expected { 0.0 } else { f64::INFINITY }
    } else {
        (observed - expected).abs() / s
    }
}

/// Distance between two independent frequencies in units of their pooled
/// standard error.
pub fn two_proportion_sigmas(p1: f64, n1: u64, p2: f64, n2: u64) -> f64 {
    let pooled = (p1 * n1 as f64 + p2 * n2 as f64) / (n1 + n2) as f64;
    let s = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if s == 0.0 {
        if p1 == p2 { 0.0 } else { f64::INFINITY }
    } else {
        (p1 - p2).abs() / s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTwoSample {
    /// `sup |F_a − F_b|`.
    pub statistic: f64,
    /// Asymptotic critical value at the chosen level.
    pub critical: f64,
    pub level: f64,
    pub passes: bool,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic critical value
/// `c(level)·√((n+m)/(nm))`, `c(level) = √(−ln(level/2)/2)`.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> KsTwoSample {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be non-empty");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    let critical = c * ((n + m) / (n * m)).sqrt();
    KsTwoSample {
        statistic: d,
        critical,
        level,
        passes: d <= critical,
    }
}
