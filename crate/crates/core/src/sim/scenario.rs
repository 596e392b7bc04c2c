//! Validated, ready-to-run scenario.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, RadioConfig};
use crate::error::{Error, Result};
use crate::gib::GibTable;
use crate::slotopt::{LyapunovWeights, SqganSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Information-bottleneck encoder with an edge-server decoding stage.
    Gib,
    /// Masked vector-quantized codec, device-side costs only.
    Sqgan,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Gib => "gib",
            Mode::Sqgan => "sqgan",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuConfig {
    pub f_max: f64,
    /// Effective switch capacitance; CPU power is `η f³`.
    pub eta: f64,
    /// Cores × floating-point operations per cycle.
    pub rho: f64,
    pub p_cpu_max: Option<f64>,
}

/// Long-term average targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub d_avg: f64,
    pub g_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceTask {
    Gib(Arc<GibTable>),
    Sqgan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDeviceConfig {
    pub id: usize,
    pub distance_m: f64,
    pub cpu: CpuConfig,
    pub radio: RadioConfig,
    pub targets: Targets,
    pub weights: LyapunovWeights,
    pub task: DeviceTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeServerConfig {
    pub f_c_max: f64,
    pub eta: f64,
    /// Penalty weight of the server sub-problem.
    pub v: f64,
    /// One entry per device.
    pub rho_es: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub tol: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 500,
            tol: 1e-3,
        }
    }
}

pub const DEFAULT_SUMMARY_WINDOW: usize = 1000;
pub const DEFAULT_MAX_SLOTS: usize = 200_000;
/// A queue above `factor × lr × target` counts as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Delay charged to a slot in which the task could not be served.
pub const BLOCKED_DELAY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mode: Mode,
    pub seed: u64,
    pub max_slots: usize,
    pub summary_window: usize,
    pub convergence: ConvergenceConfig,
    pub devices: Vec<EdgeDeviceConfig>,
    pub server: EdgeServerConfig,
    pub channel: ChannelModel,
    pub sqgan: SqganSettings,
    /// Standard deviation of the Gaussian error added to the surrogate metric in codec mode.
    pub metric_noise_std: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        if self.devices.is_empty() {
            return bad("devices", "at least one device is required");
        }
        if self.convergence.window < 100 {
            return bad("scenario.convergence.window", "must be at least 100 slots");
        }
        if !(self.convergence.tol > 0.0) {
            return bad("scenario.convergence.tol", "must be positive");
        }
        if self.summary_window == 0 {
            return bad("scenario.summary_window", "must be positive");
        }
        if self.max_slots == 0 {
            return bad("scenario.max_slots", "must be positive");
        }
        if !(self.metric_noise_std >= 0.0) {
            return bad("surrogate.noise_std", "must be non-negative");
        }
        self.channel.abg.validate().map_err(|e| Error::config("channel", e.to_string()))?;
        self.sqgan.params.validate().map_err(|e| Error::config("surrogate", e.to_string()))?;
        if !(self.sqgan.m_min > 0.0 && self.sqgan.m_min < 1.0) {
            return bad("surrogate.m_min", "must lie in (0, 1)");
        }
        if self.mode == Mode::Gib {
            if self.server.rho_es.len() != self.devices.len() {
                return bad("server.rho_es", "needs one entry per device");
            }
            for (name, v) in [("server.f_c_max", self.server.f_c_max), ("server.eta", self.server.eta)] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(name, "must be positive");
                }
            }
            if !(self.server.v >= 0.0 && self.server.v.is_finite()) {
                return bad("lyapunov.v", "must be non-negative");
            }
            if self.server.rho_es.iter().any(|&r| !(r > 0.0)) {
                return bad("server.rho_es", "entries must be positive");
            }
        }
        for (i, d) in self.devices.iter().enumerate() {
            let at = |field: &str| format!("devices[{i}].{field}");
            d.radio.validate().map_err(|e| Error::config(at("radio"), e.to_string()))?;
            d.weights.validate().map_err(|e| Error::config(at("weights"), e.to_string()))?;
            for (field, v) in [
                ("f_max", d.cpu.f_max),
                ("eta", d.cpu.eta),
                ("rho", d.cpu.rho),
                ("d_avg", d.targets.d_avg),
                ("g_avg", d.targets.g_avg),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(at(field), "must be positive"));
                }
            }
            if !(d.distance_m >= self.channel.abg.ref_distance_m) {
                return Err(Error::config(at("distance_m"), "must be at least channel.ref_distance_m"));
            }
            match (&d.task, self.mode) {
                (DeviceTask::Gib(_), Mode::Gib) | (DeviceTask::Sqgan, Mode::Sqgan) => {}
                _ => return Err(Error::config(at("source"), format!("task does not match mode {}", self.mode))),
            }
        }
        Ok(())
    }

    /// Reseeds the channel and the metric noise together.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.channel.seed = seed;
    }

    /// Sets the penalty weight of every device and of the server.
    pub fn set_v(&mut self, v: f64) {
        self.server.v = v;
        for d in &mut self.devices {
            d.weights.v = v;
        }
    }

    /// `max_k d_y · d_min`, the server-side operation bound used by the frequency split.
    pub fn server_ops_max(&self) -> f64 {
        self.devices
            .iter()
            .filter_map(|d| match &d.task {
                DeviceTask::Gib(t) => Some(t.server_ops_max()),
                DeviceTask::Sqgan => None,
            })
            .fold(0.0, f64::max)
    }
}
