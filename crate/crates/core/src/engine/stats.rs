//! Replica-level statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean of replica values with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// `None` with fewer than two replicas.
    pub ci95_half_width: Option<f64>,
    pub replicas: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Estimate {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let ci95_half_width = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        });
        Estimate { mean, ci95_half_width, replicas: n }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95_half_width.unwrap_or(f64::INFINITY)
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95_half_width.unwrap_or(f64::INFINITY)
    }

    /// Same estimate with every value multiplied by `k > 0`.
    pub fn scaled(&self, k: f64) -> Estimate {
        Estimate { mean: self.mean * k, ci95_half_width: self.ci95_half_width.map(|h| h * k), replicas: self.replicas }
    }
}

/// Estimate of the replica-paired difference `a − b`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    assert_eq!(a.len(), b.len(), "paired samples need equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::from_samples(&d)
}

/// `a < b` with 95% confidence: the interval of the paired difference lies
/// below zero.
pub fn confidently_less(a: &[f64], b: &[f64]) -> bool {
    paired_difference(a, b).upper() < 0.0
}

/// `a ≤ b` with 95% confidence: the interval of the paired difference does
/// not extend above `tol`.
pub fn confidently_at_most(a: &[f64], b: &[f64], tol: f64) -> bool {
    paired_difference(a, b).upper() <= tol
}
