//! Virtual queues and the quadratic Lyapunov function.

use serde::{Deserialize, Serialize};

/// `max(0, q + lr·(value − target))`.
pub fn update_queue(q: f64, value: f64, target: f64, lr: f64) -> f64 {
    debug_assert!(lr > 0.0);
    (q + lr * (value - target)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueState {
    /// Delay backlog per device.
    pub t: Vec<f64>,
    /// Metric backlog per device.
    pub u: Vec<f64>,
}

impl VirtualQueueState {
    pub fn zeros(devices: usize) -> Self {
        Self {
            t: vec![0.0; devices],
            u: vec![0.0; devices],
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `½ Σ_k (T_k² + U_k²)`.
    pub fn lyapunov(&self) -> f64 {
        0.5 * self.t.iter().chain(&self.u).map(|q| q * q).sum::<f64>()
    }
}

/// Per-device constants of the drift bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftTerms {
    pub epsilon: f64,
    pub nu: f64,
    pub d_avg: f64,
    pub g_avg: f64,
    /// Largest `|D − D_avg|` the device can realize.
    pub d_dev_max: f64,
    /// Largest `|G − G_avg|` the device can realize.
    pub g_dev_max: f64,
}

impl DriftTerms {
    /// Deviation bounds from the realized extremes of a calibration run.
    pub fn from_extremes(
        epsilon: f64,
        nu: f64,
        d_avg: f64,
        g_avg: f64,
        (d_min, d_max): (f64, f64),
        (g_min, g_max): (f64, f64),
    ) -> Self {
        Self {
            epsilon,
            nu,
            d_avg,
            g_avg,
            d_dev_max: (d_max - d_avg).abs().max((d_min - d_avg).abs()),
            g_dev_max: (g_max - g_avg).abs().max((g_min - g_avg).abs()),
        }
    }
}

/// Upper bound on `L(t+1) − L(t)`:
///
/// ```text
/// Σ_k ½ε²·ΔD_max² + ½ν²·ΔG_max² + εT_k (D_k − D_avg) + νU_k (G_k − G_avg)
/// ```
pub fn drift_bound(before: &VirtualQueueState, delays: &[f64], metrics: &[f64], terms: &[DriftTerms]) -> f64 {
    terms
        .iter()
        .enumerate()
        .map(|(k, c)| {
            0.5 * (c.epsilon * c.d_dev_max).powi(2)
                + 0.5 * (c.nu * c.g_dev_max).powi(2)
                + c.epsilon * before.t[k] * (delays[k] - c.d_avg)
                + c.nu * before.u[k] * (metrics[k] - c.g_avg)
        })
        .sum()
}
