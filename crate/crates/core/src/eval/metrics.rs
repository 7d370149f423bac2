//! Shortfall statistics and their standard errors.

use serde::{Deserialize, Serialize};

use crate::rng::NoiseMode;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample standard deviation.
    pub std: f64,
    /// `mean + lambda * std^2`.
    pub ac: f64,
    /// `std / sqrt(n)`.
    pub se_mean: f64,
    /// Delta-method standard error of `ac`, from `x + lambda (x - mean)^2`.
    pub se_ac: f64,
    /// Standard errors from antithetic pair averages, when paths were paired.
    pub se_mean_paired: Option<f64>,
    pub se_ac_paired: Option<f64>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Mean, unbiased std and AC objective of `samples` (at least two).
///
/// Under antithetic noise consecutive samples `(2j, 2j+1)` share shocks, so
/// the paired standard errors use the `n/2` pair averages instead.
pub fn compute_metrics(samples: &[f64], lambda: f64, noise: NoiseMode) -> Metrics {
    assert!(samples.len() >= 2, "metrics need at least two samples");
    let n = samples.len();
    let (mean, std) = mean_std(samples);
    let psi: Vec<f64> = samples.iter().map(|x| x + lambda * (x - mean).powi(2)).collect();
    let (_, psi_std) = mean_std(&psi);
    let root_n = (n as f64).sqrt();
    let (se_mean_paired, se_ac_paired) = if noise == NoiseMode::Antithetic && n >= 4 {
        let pair = |v: &[f64]| -> Vec<f64> { v.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect() };
        let pm = pair(samples);
        let pp = pair(&psi);
        let root_pairs = (pm.len() as f64).sqrt();
        (Some(mean_std(&pm).1 / root_pairs), Some(mean_std(&pp).1 / root_pairs))
    } else {
        (None, None)
    };
    Metrics {
        n,
        mean,
        std,
        ac: mean + lambda * std * std,
        se_mean: std / root_n,
        se_ac: psi_std / root_n,
        se_mean_paired,
        se_ac_paired,
    }
}

impl Metrics {
    /// The larger of the i.i.d. and paired standard errors of the mean.
    pub fn conservative_se_mean(&self) -> f64 {
        self.se_mean.max(self.se_mean_paired.unwrap_or(0.0))
    }

    pub fn conservative_se_ac(&self) -> f64 {
        self.se_ac.max(self.se_ac_paired.unwrap_or(0.0))
    }
}

/// `sqrt(a^2 + b^2)`.
pub fn pooled_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_two_point() {
        let m = compute_metrics(&[3.5; 10], 1e-5, NoiseMode::Independent);
        assert_eq!((m.mean, m.std, m.ac), (3.5, 0.0, 3.5));
        let m = compute_metrics(&[0.0, 2.0], 1e-5, NoiseMode::Independent);
        assert_eq!(m.mean, 1.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert!((m.ac - (1.0 + 2e-5)).abs() < 1e-15);
        assert!((m.se_mean - 1.0).abs() < 1e-15);
    }

    #[test]
    fn paired_se_uses_pair_means() {
        // Perfectly anti-correlated pairs: every pair mean is 5.
        let x = [4.0, 6.0, 1.0, 9.0, 5.0, 5.0];
        let m = compute_metrics(&x, 0.0, NoiseMode::Antithetic);
        assert_eq!(m.se_mean_paired, Some(0.0));
        assert!(m.se_mean > 0.0);
        assert_eq!(m.conservative_se_mean(), m.se_mean);
    }

    #[test]
    fn ac_identity_on_published_row() {
        // TWAP, HH, beta = 0.5 row of the published table.
        let ac = 211_138.91 + 1e-5 * 162_927.23f64.powi(2);
        assert!((ac - 476_591.73).abs() < 0.005, "{ac}");
    }
}
