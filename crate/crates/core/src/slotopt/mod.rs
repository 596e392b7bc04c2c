//! Per-slot drift-plus-penalty solvers.
//!
//! Given the scaled virtual queues `εT` and `νU` of a device, the per-slot objective
//!
//! ```text
//! g = εT·N/R + εT·W/(fρ) + νU·G + V·(B N₀/h)·e^{R ln2 / B} + V·Γ·η·f³
//! ```
//!
//! separates into a rate term and a CPU term, each with a closed-form box-clipped
//! minimizer. The encoder setting (a `β` from the grid, or a mask pair) is then chosen by
//! evaluating `g` at those minimizers.

pub mod lambert;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::RadioConfig;
use crate::error::{Error, Result};
use crate::gib::{GibRatePoint, GibTable};
use crate::surrogate::{self, ReductionMode, SurrogateParams};

pub use lambert::lambert_w0;

/// Drift-plus-penalty weights of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovWeights {
    pub v: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl LyapunovWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return Err(Error::Domain(format!("V must be non-negative, got {}", self.v)));
        }
        for (name, x) in [("epsilon", self.epsilon), ("nu", self.nu), ("gamma", self.gamma)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// Everything a device sub-problem needs about the current slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdSlotInput {
    /// `ε_k T_k(t)`
    pub e_t: f64,
    /// `ν_k U_k(t)`
    pub nu_u: f64,
    pub gain: f64,
    pub r_max: f64,
    pub radio: RadioConfig,
    pub v: f64,
    pub gamma: f64,
    pub eta: f64,
    pub rho: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdDecisionGib {
    pub beta: f64,
    /// Index into the device's rate-point table.
    pub point: usize,
    pub rate: f64,
    pub freq: f64,
    pub objective: f64,
    pub blocked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdDecisionSqgan {
    pub m_x: f64,
    pub m_s: f64,
    pub rate: f64,
    pub freq: f64,
    pub objective: f64,
    pub blocked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsDecision {
    pub f_c: f64,
    pub f_es: Vec<f64>,
}

/// `(2B/ln2) · W(√(εT ln2 h N / (4 B² V N₀)))`, clipped to `[0, r_max]`.
pub fn optimal_rate(e_t: f64, n_bits: f64, gain: f64, radio: &RadioConfig, v: f64, r_max: f64) -> f64 {
    if e_t * n_bits <= 0.0 || gain <= 0.0 || r_max <= 0.0 {
        return 0.0;
    }
    if v <= 0.0 {
        return r_max;
    }
    let b = radio.bandwidth_hz;
    let arg = (e_t * LN_2 * gain * n_bits / (4.0 * b * b * v * radio.noise_psd_w_per_hz)).sqrt();
    // arg is finite and non-negative here
    let w = lambert_w0(arg).unwrap_or(f64::INFINITY);
    (2.0 * b / LN_2 * w).min(r_max)
}

/// `(εT W / (3 V Γ η ρ))^{1/4}`, clipped to `[0, f_max]`.
pub fn optimal_freq_device(e_t: f64, w_ops: f64, v: f64, gamma: f64, eta: f64, rho: f64, f_max: f64) -> f64 {
    if e_t * w_ops <= 0.0 {
        return 0.0;
    }
    let denom = 3.0 * v * gamma * eta * rho;
    if denom <= 0.0 {
        return f_max;
    }
    (e_t * w_ops / denom).powf(0.25).min(f_max)
}

/// Rate part of the device objective: `εT N / R + V (B N₀ / h) e^{R ln2 / B}`.
pub fn rate_cost(e_t: f64, n_bits: f64, rate: f64, gain: f64, radio: &RadioConfig, v: f64) -> f64 {
    let b = radio.bandwidth_hz;
    delay_weight(e_t * n_bits, rate) + v * b * radio.noise_psd_w_per_hz / gain * (rate * LN_2 / b).exp()
}

/// CPU part of the device objective: `εT W / (f ρ) + V Γ η f³`.
pub fn cpu_cost(e_t: f64, w_ops: f64, freq: f64, v: f64, gamma: f64, eta: f64, rho: f64) -> f64 {
    delay_weight(e_t * w_ops, freq * rho) + v * gamma * eta * freq.powi(3)
}

/// `num / den` with `0 / 0 = 0`: no backlog weight means idle resources cost nothing.
fn delay_weight(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Full device objective for a given encoder cost `(n_bits, w_ops, metric)` and `(R, f)`.
#[allow(clippy::too_many_arguments)]
pub fn ed_objective(input: &EdSlotInput, gamma: f64, n_bits: f64, w_ops: f64, metric: f64, rate: f64, freq: f64) -> f64 {
    if input.gain <= 0.0 {
        return f64::INFINITY;
    }
    rate_cost(input.e_t, n_bits, rate, input.gain, &input.radio, input.v)
        + cpu_cost(input.e_t, w_ops, freq, input.v, gamma, input.eta, input.rho)
        + input.nu_u * metric
}

/// Closed-form `(R*, f*)` and the resulting objective for one encoder setting.
fn evaluate_setting(input: &EdSlotInput, gamma: f64, n_bits: f64, w_ops: f64, metric: f64) -> (f64, f64, f64) {
    let rate = optimal_rate(input.e_t, n_bits, input.gain, &input.radio, input.v, input.r_max);
    let freq = optimal_freq_device(input.e_t, w_ops, input.v, gamma, input.eta, input.rho, input.f_max);
    (ed_objective(input, gamma, n_bits, w_ops, metric, rate, freq), rate, freq)
}

/// Objective of one tabulated `β` at its closed-form `(R*, f*)`.
pub fn gib_setting_objective(input: &EdSlotInput, table: &GibTable, point: &GibRatePoint) -> (f64, f64, f64) {
    evaluate_setting(input, input.gamma, point.entropy_bits, table.device_ops(point), point.nmse)
}

/// Picks the grid `β` minimizing the device objective; ties go to the smaller `β`.
pub fn solve_ed_gib(input: &EdSlotInput, table: &GibTable) -> Result<EdDecisionGib> {
    let first = table.points.first().ok_or(Error::EmptyGrid)?;
    if input.gain <= 0.0 || input.r_max <= 0.0 {
        return Ok(EdDecisionGib {
            beta: first.beta,
            point: 0,
            rate: 0.0,
            freq: 0.0,
            objective: f64::INFINITY,
            blocked: true,
        });
    }
    let mut best: Option<EdDecisionGib> = None;
    for (i, p) in table.points.iter().enumerate() {
        let (objective, rate, freq) = gib_setting_objective(input, table, p);
        if best.map_or(true, |b| objective < b.objective) {
            best = Some(EdDecisionGib {
                beta: p.beta,
                point: i,
                rate,
                freq,
                objective,
                blocked: false,
            });
        }
    }
    best.ok_or_else(|| Error::Numerical("device objective is NaN for every β".into()))
}

/// Edge-server split: `f_c = √S / (3Vη)^{1/4}` clipped to `f_c_max`, `f_k = (√A_k / S) f_c`
/// with `A_k = εT_k W / ρ_k` and `S = Σ √A_k`.
pub fn solve_es(e_t: &[f64], w_es_max: f64, rho_es: &[f64], v: f64, eta: f64, f_c_max: f64) -> EsDecision {
    debug_assert_eq!(e_t.len(), rho_es.len());
    let roots: Vec<f64> = e_t
        .iter()
        .zip(rho_es)
        .map(|(&et, &rho)| (et * w_es_max / rho).max(0.0).sqrt())
        .collect();
    let s: f64 = roots.iter().sum();
    if s <= 0.0 {
        return EsDecision {
            f_c: 0.0,
            f_es: vec![0.0; e_t.len()],
        };
    }
    let denom = 3.0 * v * eta;
    let f_c = if denom > 0.0 {
        (s.sqrt() / denom.powf(0.25)).min(f_c_max)
    } else {
        f_c_max
    };
    EsDecision {
        f_c,
        f_es: roots.iter().map(|r| r / s * f_c).collect(),
    }
}

/// `Σ_k εT_k W / (f_k ρ_k) + V η f_c³`.
pub fn es_objective(e_t: &[f64], w_es_max: f64, rho_es: &[f64], v: f64, eta: f64, decision: &EsDecision) -> f64 {
    e_t.iter()
        .zip(rho_es)
        .zip(&decision.f_es)
        .map(|((&et, &rho), &f)| delay_weight(et * w_es_max, f * rho))
        .sum::<f64>()
        + v * eta * decision.f_c.powi(3)
}

/// Mask-domain settings of the device solver in codec mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqganSettings {
    pub params: SurrogateParams,
    pub mode: ReductionMode,
    pub m_min: f64,
}

const SCAN_POINTS: usize = 64;
const MASK_TOL: f64 = 1e-6;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Objective and `(R*, f*)` for a given mask pair; the CPU weight Γ is fixed to 1.
pub fn sqgan_objective(input: &EdSlotInput, s: &SqganSettings, m_x: f64, m_s: f64) -> (f64, f64, f64) {
    let n_bits = surrogate::bits_count(m_x, m_s);
    let w_ops = surrogate::ops_count(m_x, m_s);
    let metric = surrogate::g_unchecked(m_x, m_s, &s.params);
    evaluate_setting(input, 1.0, n_bits, w_ops, metric)
}

/// Minimizes the device objective over masks: a log-spaced scan of `m_s` along the
/// reduction curve `m_x(m_s)` refined by golden-section search, plus the same search
/// along the four edges of the mask box.
pub fn solve_ed_sqgan(input: &EdSlotInput, s: &SqganSettings) -> EdDecisionSqgan {
    if input.gain <= 0.0 || input.r_max <= 0.0 {
        return EdDecisionSqgan {
            m_x: 1.0,
            m_s: 1.0,
            rate: 0.0,
            freq: 0.0,
            objective: f64::INFINITY,
            blocked: true,
        };
    }
    let lo = s.m_min;
    let mut best = (f64::INFINITY, 1.0, 1.0);
    let mut consider = |m_x: f64, m_s: f64| {
        let (obj, _, _) = sqgan_objective(input, s, m_x, m_s);
        if obj < best.0 {
            best = (obj, m_x, m_s);
        }
        obj
    };

    let reduce = |m_s: f64| surrogate::m_x_reduction(m_s, &s.params, s.mode, lo);
    line_search(lo, 1.0, |m_s| consider(reduce(m_s), m_s));
    line_search(lo, 1.0, |m_x| consider(m_x, lo));
    line_search(lo, 1.0, |m_x| consider(m_x, 1.0));
    line_search(lo, 1.0, |m_s| consider(lo, m_s));
    line_search(lo, 1.0, |m_s| consider(1.0, m_s));

    let (_, m_x, m_s) = best;
    let (objective, rate, freq) = sqgan_objective(input, s, m_x, m_s);
    EdDecisionSqgan {
        m_x,
        m_s,
        rate,
        freq,
        objective,
        blocked: false,
    }
}

/// Log-spaced scan of `[lo, hi]` followed by golden-section refinement around the best
/// scan point until the bracket is narrower than `MASK_TOL`.
fn line_search(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| (llo + (lhi - llo) * i as f64 / (SCAN_POINTS - 1) as f64).exp())
        .map(|x| x.clamp(lo, hi))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(SCAN_POINTS - 1)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > MASK_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gib::GaussianSource;
    use approx::assert_relative_eq;

    fn radio() -> RadioConfig {
        RadioConfig {
            bandwidth_hz: 1000.0,
            noise_psd_w_per_hz: 3.981e-21,
            max_tx_power_w: 0.1,
            carrier_freq_hz: 1e9,
        }
    }

    fn input(e_t: f64, nu_u: f64, gain: f64) -> EdSlotInput {
        let radio = radio();
        EdSlotInput {
            e_t,
            nu_u,
            gain,
            r_max: crate::channel::max_rate(gain, &radio),
            radio,
            v: 1.0,
            gamma: 1.0,
            eta: 2.57e-27,
            rho: 4.0,
            f_max: 1.8e9,
        }
    }

    /// `e_t` such that the Lambert argument equals `arg`.
    fn e_t_for_arg(arg: f64, n_bits: f64, gain: f64, r: &RadioConfig, v: f64) -> f64 {
        arg * arg * 4.0 * r.bandwidth_hz.powi(2) * v * r.noise_psd_w_per_hz / (LN_2 * gain * n_bits)
    }

    #[test]
    fn rate_closed_form_examples() {
        let r = radio();
        let (n, h, v) = (10.0, 1e-9, 1.0);
        let e_t = e_t_for_arg(std::f64::consts::E, n, h, &r, v);
        assert_relative_eq!(optimal_rate(e_t, n, h, &r, v, f64::INFINITY), 2000.0 / LN_2, max_relative = 1e-12);
        assert_relative_eq!(2000.0 / LN_2, 2885.390, epsilon = 1e-3);

        let e_t = e_t_for_arg(1.0, n, h, &r, v);
        let rate = optimal_rate(e_t, n, h, &r, v, f64::INFINITY);
        assert_relative_eq!(rate, 2000.0 / LN_2 * 0.5671432904097838, max_relative = 1e-12);
        assert!((rate - 1636.4296).abs() < 1e-3, "{rate}");

        assert_eq!(optimal_rate(e_t, n, h, &r, v, 100.0), 100.0);
        assert_eq!(optimal_rate(e_t, 0.0, h, &r, v, 1e9), 0.0);
    }

    #[test]
    fn frequency_closed_form_examples() {
        assert_relative_eq!(optimal_freq_device(3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0), 1.0, epsilon = 1e-15);
        let f = optimal_freq_device(2.0, 402_783_744.0, 1.0, 1.0, 2.0, 1.0, 1e9);
        assert!((f - 107.64).abs() < 0.01, "{f}");
        assert_eq!(optimal_freq_device(3e12, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0), 10.0);
        assert_eq!(optimal_freq_device(3.0, 0.0, 1.0, 1.0, 1.0, 1.0, 10.0), 0.0);
    }

    #[test]
    fn es_split_examples() {
        let d = solve_es(&[1.0], 1.0, &[1.0], 1.0 / 3.0, 1.0, 10.0);
        assert_relative_eq!(d.f_c, 1.0, epsilon = 1e-15);
        assert_relative_eq!(d.f_es[0], 1.0, epsilon = 1e-15);

        let d = solve_es(&[1.0, 1.0], 1.0, &[1.0, 1.0], 1.0 / 3.0, 1.0, 10.0);
        assert_relative_eq!(d.f_c, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(d.f_es[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(d.f_es.iter().sum::<f64>(), d.f_c, epsilon = 1e-15);

        let d = solve_es(&[1.0, 4.0], 1.0, &[1.0, 1.0], 1.0 / 3.0, 1.0, 0.5);
        assert_eq!(d.f_c, 0.5);
        assert_relative_eq!(d.f_es[1] / d.f_es[0], 2.0, epsilon = 1e-14);

        let d = solve_es(&[0.0, 0.0], 1.0, &[1.0, 1.0], 1.0, 1.0, 5.0);
        assert_eq!(d.f_c, 0.0);
        assert_eq!(d.f_es, vec![0.0, 0.0]);
    }

    #[test]
    fn es_split_beats_perturbations() {
        let (e_t, rho) = ([0.3, 1.2, 0.05], [4.0, 4.0, 8.0]);
        let d = solve_es(&e_t, 32.0, &rho, 10.0, 2.57e-27, 1.8e9);
        let best = es_objective(&e_t, 32.0, &rho, 10.0, 2.57e-27, &d);
        for k in 0..3 {
            for scale in [0.99, 1.01] {
                let mut p = d.clone();
                p.f_es[k] *= scale;
                p.f_c = p.f_es.iter().sum();
                assert!(es_objective(&e_t, 32.0, &rho, 10.0, 2.57e-27, &p) >= best);
            }
        }
    }

    #[test]
    fn gib_metric_dominates_with_large_metric_weight() {
        let src = GaussianSource::synthetic(8, 3, 11, 0.8).unwrap();
        let table = GibTable::build(&src).unwrap();
        let d = solve_ed_gib(&input(1e-6, 1e9, 1e-10), &table).unwrap();
        assert_eq!(d.point, table.points.len() - 1);
    }

    #[test]
    fn gib_idle_when_queues_empty() {
        let src = GaussianSource::synthetic(8, 3, 11, 0.8).unwrap();
        let table = GibTable::build(&src).unwrap();
        let d = solve_ed_gib(&input(0.0, 0.0, 1e-10), &table).unwrap();
        assert_eq!(d.rate, 0.0);
        assert_eq!(d.freq, 0.0);
        // every β ties on the constant power term: smallest wins
        assert_eq!(d.point, 0);
    }

    #[test]
    fn gib_blocked_on_zero_gain() {
        let table = GibTable::build(&GaussianSource::scalar(1.0, 1.0, 0.8).unwrap()).unwrap();
        let d = solve_ed_gib(&input(1.0, 1.0, 0.0), &table).unwrap();
        assert!(d.blocked);
        assert_eq!(d.rate, 0.0);
        assert!(d.objective.is_infinite());
    }

    fn settings() -> SqganSettings {
        SqganSettings {
            params: SurrogateParams::REFERENCE,
            mode: ReductionMode::Stationary,
            m_min: surrogate::M_MIN,
        }
    }

    fn sqgan_input(e_t: f64, nu_u: f64) -> EdSlotInput {
        let radio = RadioConfig {
            bandwidth_hz: 1e5,
            noise_psd_w_per_hz: 3.981e-21,
            max_tx_power_w: 0.5,
            carrier_freq_hz: 1e9,
        };
        let gain = 1e-10;
        EdSlotInput {
            e_t,
            nu_u,
            gain,
            r_max: crate::channel::max_rate(gain, &radio),
            radio,
            v: 1.0,
            gamma: 1.0,
            eta: 1e-26,
            rho: 16.0,
            f_max: 1e9,
        }
    }

    #[test]
    fn sqgan_pure_cost_uses_smallest_masks() {
        let d = solve_ed_sqgan(&sqgan_input(1e-3, 0.0), &settings());
        assert_relative_eq!(d.m_s, surrogate::M_MIN, max_relative = 1e-6);
        assert_relative_eq!(d.m_x, surrogate::M_MIN, max_relative = 1e-6);
    }

    #[test]
    fn sqgan_pure_distortion_uses_full_masks() {
        let d = solve_ed_sqgan(&sqgan_input(0.0, 1.0), &settings());
        assert_relative_eq!(d.m_s, 1.0, epsilon = 1e-6);
        assert_relative_eq!(d.m_x, 1.0, epsilon = 1e-6);
        assert_eq!(d.rate, 0.0);
    }
}
