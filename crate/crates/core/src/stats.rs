//! Sample statistics with order-fixed reductions.

use serde::{Deserialize, Serialize};

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    /// Sample mean and `s / sqrt(M)` with the unbiased sample deviation `s`.
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len();
        if m == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / m as f64;
        let stderr = if m > 1 {
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (m - 1) as f64).sqrt() / (m as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            samples: m,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            samples: 0,
        }
    }

    /// `sqrt(se_a^2 + se_b^2)` for comparing two independent estimates.
    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Per-component mean and standard deviation of vector samples.
pub fn mean_std(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.first().map_or(0, |r| r.len());
    let m = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; n];
    for r in rows {
        for ((a, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let denom = if rows.len() > 1 { m - 1.0 } else { 1.0 };
    let std = var.into_iter().map(|v| (v / denom).sqrt()).collect();
    (mean, std)
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_basic() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let s = (5.0f64 / 3.0).sqrt();
        assert!((e.stderr - s / 2.0).abs() < 1e-15);
        let c = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(c.stderr, 0.0);
    }

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 1.0, -1.0];
        assert!((slope(&x, &y) + 2.0).abs() < 1e-15);
    }
}
