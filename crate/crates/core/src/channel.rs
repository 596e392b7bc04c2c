//! Per-device wireless channel: alpha-beta-gamma pathloss, log-normal shadowing,
//! Rayleigh block fading and the Shannon rate limit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ChaCha words reserved per (device, slot) cell of a stream.
const WORDS_PER_SLOT: u128 = 1 << 10;

/// Purpose tags that separate the random streams of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Channel = 0,
    MetricNoise = 1,
}

/// Counter-based generator for `(seed, device, slot, purpose)`. Draws never depend on
/// the order in which cells are visited.
pub fn slot_rng(seed: u64, device: usize, slot: u64, purpose: StreamPurpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((device as u64) << 2) | purpose as u64);
    rng.set_word_pos(u128::from(slot) * WORDS_PER_SLOT);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbgParams {
    pub path_exponent: f64,
    pub offset_db: f64,
    pub freq_exponent: f64,
    pub shadow_sigma_db: f64,
    pub ref_distance_m: f64,
    pub ref_freq_hz: f64,
}

impl Default for AbgParams {
    fn default() -> Self {
        Self {
            path_exponent: 3.5,
            offset_db: 24.4,
            freq_exponent: 1.9,
            shadow_sigma_db: 7.6,
            ref_distance_m: 1.0,
            ref_freq_hz: 1e9,
        }
    }
}

impl AbgParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ref_distance_m > 0.0) {
            return Err(Error::Domain("ref_distance_m must be positive".into()));
        }
        if !(self.ref_freq_hz > 0.0) {
            return Err(Error::Domain("ref_freq_hz must be positive".into()));
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(Error::Domain("shadow_sigma_db must be non-negative".into()));
        }
        if ![self.path_exponent, self.offset_db, self.freq_exponent]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("pathloss coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    #[default]
    Rayleigh,
    None,
}

/// Radio share of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub max_tx_power_w: f64,
    pub carrier_freq_hz: f64,
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("max_tx_power_w", self.max_tx_power_w),
            ("carrier_freq_hz", self.carrier_freq_hz),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Noise power over the allocated band, `N₀ B`.
    pub fn noise_power_w(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }
}

/// Converts a power spectral density in dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `10 α log₁₀(d/d₀) + β + 10 γ log₁₀(f/f₀)` in dB.
pub fn pathloss_db(distance_m: f64, freq_hz: f64, p: &AbgParams) -> Result<f64> {
    if !(distance_m >= p.ref_distance_m) {
        return Err(Error::Domain(format!(
            "distance {distance_m} m is below the reference distance {} m",
            p.ref_distance_m
        )));
    }
    if !(freq_hz > 0.0) {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz}")));
    }
    Ok(10.0 * p.path_exponent * (distance_m / p.ref_distance_m).log10()
        + p.offset_db
        + 10.0 * p.freq_exponent * (freq_hz / p.ref_freq_hz).log10())
}

/// `B log₂(1 + p h / (N₀ B))` in bit/s.
pub fn max_rate(gain: f64, radio: &RadioConfig) -> f64 {
    if gain <= 0.0 {
        return 0.0;
    }
    let snr = radio.max_tx_power_w * gain / radio.noise_power_w();
    radio.bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}

/// Transmit power needed for `rate` over gain `gain`: `(N₀B/h)(2^{R/B} − 1)`.
pub fn transmit_power(rate: f64, gain: f64, radio: &RadioConfig) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if gain <= 0.0 {
        return f64::INFINITY;
    }
    radio.noise_power_w() / gain * (rate * std::f64::consts::LN_2 / radio.bandwidth_hz).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub slot: u64,
    pub gain: f64,
    pub r_max: f64,
}

/// Channel generator shared by all devices of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub abg: AbgParams,
    pub fading: Fading,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(abg: AbgParams, fading: Fading, seed: u64) -> Result<Self> {
        abg.validate()?;
        Ok(Self { abg, fading, seed })
    }

    /// Linear power gain `10^{−(PL + S)/10} · F` for one device and slot.
    pub fn sample_gain(
        &self,
        device: usize,
        slot: u64,
        distance_m: f64,
        radio: &RadioConfig,
    ) -> Result<ChannelDraw> {
        let pl = pathloss_db(distance_m, radio.carrier_freq_hz, &self.abg)?;
        let mut rng = slot_rng(self.seed, device, slot, StreamPurpose::Channel);
        let shadow = if self.abg.shadow_sigma_db > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            self.abg.shadow_sigma_db * z
        } else {
            0.0
        };
        let fading = match self.fading {
            Fading::Rayleigh => Exp1.sample(&mut rng),
            Fading::None => 1.0,
        };
        let gain = 10f64.powf(-(pl + shadow) / 10.0) * fading;
        Ok(ChannelDraw {
            slot,
            gain,
            r_max: max_rate(gain, radio),
        })
    }
}
