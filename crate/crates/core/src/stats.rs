//! Small statistics helpers shared by the ensemble and Monte Carlo code.

use serde::{Deserialize, Serialize};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    /// `|self - other| / sqrt(se1^2 + se2^2)`; infinite when both errors vanish
    /// and the values differ.
    pub fn z_against(&self, other: &Estimate) -> f64 {
        let diff = self.value - other.value;
        let se = self.stderr.hypot(other.stderr);
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean with the standard error of independent samples.
pub fn mean_stderr(xs: &[f64]) -> Estimate {
    let value = mean(xs);
    let stderr = if xs.len() < 2 {
        0.0
    } else {
        (variance(xs) / xs.len() as f64).sqrt()
    };
    Estimate { value, stderr }
}

/// Integrated autocorrelation time with Sokal's automatic window.
///
/// Uses the convention `tau = 1/2 + sum_{t=1}^{M} rho(t)`, so that the
/// variance of the sample mean is `2 tau sigma^2 / n`. The window `M` is the
/// smallest lag with `M >= c * tau(M)`, `c = 6`. Returns `0.5` for series
/// with no variance.
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    const WINDOW_FACTOR: f64 = 6.0;
    let n = xs.len();
    if n < 4 {
        return 0.5;
    }
    let m = mean(xs);
    let centered: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for lag in 1..n / 2 {
        let c = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        tau += c / c0;
        if lag as f64 >= WINDOW_FACTOR * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Mean of a correlated series with an autocorrelation-adjusted standard error.
pub fn correlated_mean(xs: &[f64]) -> (Estimate, f64) {
    let tau = integrated_autocorrelation_time(xs);
    let value = mean(xs);
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - value) * (x - value)).sum::<f64>() / xs.len() as f64
    };
    let stderr = (2.0 * tau * var / xs.len().max(1) as f64).sqrt();
    (Estimate { value, stderr }, tau)
}

/// Kendall rank correlation (tau-a) of a sequence against its index.
///
/// `None` for fewer than two points.
pub fn kendall_tau_trend(ys: &[f64]) -> Option<f64> {
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            score += match ys[j].partial_cmp(&ys[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    Some(score as f64 / (n * (n - 1) / 2) as f64)
}
