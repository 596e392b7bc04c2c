//! TOML scenario files.
//!
//! Units are fixed: Hz, W, seconds, bits. The only dB-scale input is
//! `noise_psd_dbm_per_hz`, converted to W/Hz on load.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_per_hz_to_w_per_hz, AbgParams, ChannelModel, Fading, RadioConfig};
use crate::error::{Error, Result};
use crate::gib::{GaussianSource, GibTable};
use crate::sim::{
    ConvergenceConfig, CpuConfig, DeviceTask, EdgeDeviceConfig, EdgeServerConfig, Mode, Scenario, SweepGrid, Targets,
};
use crate::slotopt::{LyapunovWeights, SqganSettings};
use crate::surrogate::{ReductionMode, SurrogateParams, M_MIN};

/// Stream constant separating device placement from the channel draws.
const PLACEMENT_SALT: u64 = 0x706c_6163_656d_656e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<ServerSection>,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub gib: GibSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default = "default_max_slots")]
    pub max_slots: usize,
    #[serde(default = "default_summary_window")]
    pub summary_window: usize,
    #[serde(default)]
    pub convergence: ConvergenceSection,
}

fn default_max_slots() -> usize {
    crate::sim::scenario::DEFAULT_MAX_SLOTS
}

fn default_summary_window() -> usize {
    crate::sim::scenario::DEFAULT_SUMMARY_WINDOW
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub window: usize,
    pub tol: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        let c = ConvergenceConfig::default();
        Self {
            window: c.window,
            tol: c.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub path_exponent: f64,
    pub offset_db: f64,
    pub freq_exponent: f64,
    pub shadow_sigma_db: f64,
    pub ref_distance_m: f64,
    pub ref_freq_hz: f64,
    pub fading: Fading,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let a = AbgParams::default();
        Self {
            path_exponent: a.path_exponent,
            offset_db: a.offset_db,
            freq_exponent: a.freq_exponent,
            shadow_sigma_db: a.shadow_sigma_db,
            ref_distance_m: a.ref_distance_m,
            ref_freq_hz: a.ref_freq_hz,
            fading: Fading::default(),
        }
    }
}

impl ChannelSection {
    pub fn abg(&self) -> AbgParams {
        AbgParams {
            path_exponent: self.path_exponent,
            offset_db: self.offset_db,
            freq_exponent: self.freq_exponent,
            shadow_sigma_db: self.shadow_sigma_db,
            ref_distance_m: self.ref_distance_m,
            ref_freq_hz: self.ref_freq_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub v: f64,
}

/// A scalar applied to every device, or one value per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerDevice {
    All(f64),
    Each(Vec<f64>),
}

impl PerDevice {
    fn expand(&self, k: usize, path: &str) -> Result<Vec<f64>> {
        match self {
            PerDevice::All(x) => Ok(vec![*x; k]),
            PerDevice::Each(v) if v.len() == k => Ok(v.clone()),
            PerDevice::Each(v) => Err(Error::config(path, format!("has {} entries for {k} devices", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub f_c_max: f64,
    pub eta: f64,
    pub rho_es: PerDevice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub mode: ReductionMode,
    pub m_min: f64,
    /// Standard deviation of the Gaussian error added to the metric fed to the queues.
    pub noise_std: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let p = SurrogateParams::REFERENCE;
        Self {
            a: p.a,
            b: p.b,
            c: p.c,
            mode: ReductionMode::default(),
            m_min: M_MIN,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibSection {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sources: BTreeMap<String, SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d_x: usize,
    pub d_y: usize,
    pub seed: u64,
    /// Correlation strength in (0, 1).
    pub strength: f64,
}

/// Either explicit covariance blocks or a seeded synthetic source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_y: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_xy: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl SourceSpec {
    pub fn build(&self, path: &str) -> Result<GaussianSource> {
        let wrap = |e: Error| Error::config(path, e.to_string());
        match (&self.cov_x, &self.cov_y, &self.cov_xy, &self.synthetic) {
            (Some(x), Some(y), Some(xy), None) => GaussianSource::from_rows(x, y, xy).map_err(wrap),
            (None, None, None, Some(s)) => {
                if !(s.strength > 0.0 && s.strength < 1.0) {
                    return Err(Error::config(format!("{path}.synthetic.strength"), "must lie in (0, 1)"));
                }
                GaussianSource::synthetic(s.d_x, s.d_y, s.seed, s.strength).map_err(wrap)
            }
            _ => Err(Error::config(
                path,
                "give either all of cov_x, cov_y, cov_xy or a synthetic table",
            )),
        }
    }
}

/// Distance as a fixed value or a uniform range sampled per device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Distance {
    Fixed(f64),
    Range([f64; 2]),
}

/// `count` identical devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceGroup {
    #[serde(default = "one")]
    pub count: usize,
    pub distance_m: Distance,
    pub f_max: f64,
    pub eta: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_cpu_max: Option<f64>,
    pub bandwidth_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_psd_w_per_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_psd_dbm_per_hz: Option<f64>,
    pub max_tx_power_w: f64,
    pub carrier_freq_hz: f64,
    pub d_avg: f64,
    pub g_avg: f64,
    pub epsilon: f64,
    pub nu: f64,
    #[serde(default = "unit")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// Largest seed representable as a TOML integer.
pub const MAX_SEED: u64 = i64::MAX as u64;

impl ScenarioFile {
    /// Parses TOML; schema errors carry the offending key path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, msg)
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::parse(&text)
    }

    /// Canonical TOML with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", format!("cannot serialize: {e}")))
    }

    fn scenario_section(&self) -> Result<&ScenarioSection> {
        self.scenario.as_ref().ok_or_else(|| Error::config("scenario", "missing section"))
    }

    /// Overrides the seed of `[scenario]`.
    pub fn set_seed(&mut self, seed: u64) -> Result<()> {
        if seed > MAX_SEED {
            return Err(Error::config("seed", format!("must be at most {MAX_SEED}")));
        }
        match &mut self.scenario {
            Some(s) => {
                s.seed = seed;
                Ok(())
            }
            None => Err(Error::config("scenario", "missing section")),
        }
    }

    /// Builds one named source; `None` picks the only source, or the first by name.
    pub fn source(&self, name: Option<&str>) -> Result<(String, GaussianSource)> {
        let sources = &self.gib.sources;
        let (key, spec) = match name {
            Some(n) => sources
                .get_key_value(n)
                .ok_or_else(|| Error::config(format!("gib.sources.{n}"), "no such source"))?,
            None => sources
                .iter()
                .next()
                .ok_or_else(|| Error::config("gib.sources", "no source defined"))?,
        };
        Ok((key.clone(), spec.build(&format!("gib.sources.{key}"))?))
    }

    pub fn build(&self) -> Result<Scenario> {
        let s = self.scenario_section()?;
        if s.seed > MAX_SEED {
            return Err(Error::config("scenario.seed", format!("must be at most {MAX_SEED}")));
        }
        let v = self.lyapunov.ok_or_else(|| Error::config("lyapunov", "missing section"))?.v;
        if self.devices.is_empty() {
            return Err(Error::config("devices", "at least one device group is required"));
        }
        let abg = self.channel.abg();
        let channel = ChannelModel::new(abg, self.channel.fading, s.seed).map_err(|e| Error::config("channel", e.to_string()))?;

        let mut tables: BTreeMap<&str, Arc<GibTable>> = BTreeMap::new();
        let mut placement = ChaCha8Rng::seed_from_u64(s.seed ^ PLACEMENT_SALT);
        let mut devices = Vec::new();
        for (g, group) in self.devices.iter().enumerate() {
            let at = |field: &str| format!("devices[{g}].{field}");
            if group.count == 0 {
                return Err(Error::config(at("count"), "must be positive"));
            }
            let noise = match (group.noise_psd_w_per_hz, group.noise_psd_dbm_per_hz) {
                (Some(w), None) => w,
                (None, Some(dbm)) => dbm_per_hz_to_w_per_hz(dbm),
                _ => {
                    return Err(Error::config(
                        at("noise_psd_w_per_hz"),
                        "give exactly one of noise_psd_w_per_hz, noise_psd_dbm_per_hz",
                    ))
                }
            };
            let task = match s.mode {
                Mode::Sqgan => {
                    if group.source.is_some() {
                        return Err(Error::config(at("source"), "not used in sqgan mode"));
                    }
                    DeviceTask::Sqgan
                }
                Mode::Gib => {
                    let name = group.source.as_deref().ok_or_else(|| Error::config(at("source"), "required in gib mode"))?;
                    let table = match tables.get(name) {
                        Some(t) => t.clone(),
                        None => {
                            let spec = self
                                .gib
                                .sources
                                .get(name)
                                .ok_or_else(|| Error::config(at("source"), format!("unknown source `{name}`")))?;
                            let path = format!("gib.sources.{name}");
                            let src = spec.build(&path)?;
                            let t = Arc::new(GibTable::build(&src).map_err(|e| Error::config(&path, e.to_string()))?);
                            tables.insert(name, t.clone());
                            t
                        }
                    };
                    DeviceTask::Gib(table)
                }
            };
            for _ in 0..group.count {
                let distance_m = match group.distance_m {
                    Distance::Fixed(d) => d,
                    Distance::Range([lo, hi]) => {
                        if !(lo <= hi && lo > 0.0) {
                            return Err(Error::config(at("distance_m"), "range must be [lo, hi] with 0 < lo ≤ hi"));
                        }
                        if lo == hi {
                            lo
                        } else {
                            placement.gen_range(lo..hi)
                        }
                    }
                };
                devices.push(EdgeDeviceConfig {
                    id: devices.len(),
                    distance_m,
                    cpu: CpuConfig {
                        f_max: group.f_max,
                        eta: group.eta,
                        rho: group.rho,
                        p_cpu_max: group.p_cpu_max,
                    },
                    radio: RadioConfig {
                        bandwidth_hz: group.bandwidth_hz,
                        noise_psd_w_per_hz: noise,
                        max_tx_power_w: group.max_tx_power_w,
                        carrier_freq_hz: group.carrier_freq_hz,
                    },
                    targets: Targets {
                        d_avg: group.d_avg,
                        g_avg: group.g_avg,
                    },
                    weights: LyapunovWeights {
                        v,
                        epsilon: group.epsilon,
                        nu: group.nu,
                        gamma: group.gamma,
                    },
                    task: task.clone(),
                });
            }
        }

        let k = devices.len();
        let server = match (&self.server, s.mode) {
            (Some(sv), _) => EdgeServerConfig {
                f_c_max: sv.f_c_max,
                eta: sv.eta,
                v,
                rho_es: sv.rho_es.expand(k, "server.rho_es")?,
            },
            (None, Mode::Gib) => return Err(Error::config("server", "missing section (required in gib mode)")),
            (None, Mode::Sqgan) => EdgeServerConfig {
                f_c_max: 0.0,
                eta: 0.0,
                v,
                rho_es: Vec::new(),
            },
        };

        let sq = &self.surrogate;
        let sc = Scenario {
            mode: s.mode,
            seed: s.seed,
            max_slots: s.max_slots,
            summary_window: s.summary_window,
            convergence: ConvergenceConfig {
                window: s.convergence.window,
                tol: s.convergence.tol,
            },
            devices,
            server,
            channel,
            sqgan: SqganSettings {
                params: SurrogateParams {
                    a: sq.a,
                    b: sq.b,
                    c: sq.c,
                    fit_residual: None,
                },
                mode: sq.mode,
                m_min: sq.m_min,
            },
            metric_noise_std: sq.noise_std,
        };
        sc.validate()?;
        Ok(sc)
    }
}
