use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root mean square of a non-empty series.
pub fn rms(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("RMS of an empty window".into()));
    }
    Ok((series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt())
}

/// Percent reduction `100 (1 − with / without)`.
pub fn reduction(with: f64, without: f64) -> f64 {
    100.0 * (1.0 - with / without)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_ms(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let at = |q: f64| sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Some(Self {
            samples: n,
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms: at(0.5),
            p99_ms: at(0.99),
            max_ms: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub controller: String,
    pub stable: bool,
    /// Set when the run stopped early.
    pub failure: Option<String>,
    pub steps: usize,
    /// Start of the analysis window (s); the first squat cycle is excluded.
    pub window_start: f64,
    /// RMS of `T_int − T_intd` per joint (N·m).
    pub tracking_rms: [f64; 3],
    /// Human muscle torque RMS with the exoskeleton (N·m).
    pub human_torque_rms: [f64; 3],
    /// Human muscle torque RMS without the exoskeleton (N·m).
    pub human_torque_rms_unassisted: [f64; 3],
    /// `100 (1 − with / without)` per joint.
    pub torque_reduction_pct: [f64; 3],
    pub latency: Option<LatencyStats>,
    /// Mean SQP iterations per step (NMPC only).
    pub mean_iterations: f64,
    /// `∫ |T_R · θ̇_R| dt` over the window (J).
    pub actuator_work: f64,
    /// `∫ |T_h · θ̇_h| dt` over the window, with and without the exoskeleton (J).
    pub human_work: f64,
    pub human_work_unassisted: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rms_closed_forms() {
        assert_eq!(rms(&[-3.0; 10]).unwrap(), 3.0);
        let n = 4000;
        let s: Vec<f64> = (0..n).map(|k| 2.5 * (2.0 * PI * 3.0 * k as f64 / n as f64).sin()).collect();
        assert!((rms(&s).unwrap() - 2.5 / 2f64.sqrt()).abs() < 1e-6);
        assert!(rms(&[]).is_err());
    }

    #[test]
    fn reduction_arithmetic() {
        assert!((reduction(0.7 * 12.0, 12.0) - 30.0).abs() < 1e-12);
        assert_eq!(reduction(5.0, 5.0), 0.0);
    }

    #[test]
    fn latency_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencyStats::from_ms(&v).unwrap();
        assert_eq!(s.mean_ms, 50.5);
        assert_eq!(s.median_ms, 50.0);
        assert_eq!(s.p99_ms, 99.0);
        assert_eq!(s.max_ms, 100.0);
        assert!(LatencyStats::from_ms(&[]).is_none());
    }
}
