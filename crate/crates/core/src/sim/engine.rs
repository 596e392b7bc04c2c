//! Slot orchestration: channel draws, device and server solves, realized costs and
//! queue updates.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::convergence::ConvergenceDetector;
use super::queue::{update_queue, VirtualQueueState};
use super::scenario::{DeviceTask, EdgeDeviceConfig, Mode, Scenario, BLOCKED_DELAY_FACTOR, DIVERGENCE_FACTOR};
use crate::channel::{slot_rng, transmit_power, StreamPurpose};
use crate::error::{Error, Result};
use crate::slotopt::{self, EdSlotInput, EsDecision};
use crate::surrogate;

/// Slot length in seconds.
pub const SLOT_DURATION_S: f64 = 1.0;

/// Encoder setting picked for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Setting {
    Gib { beta: f64, point: usize },
    Sqgan { m_x: f64, m_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSlot {
    pub device: usize,
    pub setting: Setting,
    pub gain: f64,
    pub r_max: f64,
    pub rate: f64,
    pub freq: f64,
    pub f_es: f64,
    /// Device-side compute delay.
    pub d_cpu: f64,
    pub d_tr: f64,
    pub d_es: f64,
    /// Delay charged to the queue; the penalty when blocked.
    pub delay: f64,
    pub metric: f64,
    pub p_cpu: f64,
    pub p_tr: f64,
    pub p_es: f64,
    pub queue_t: f64,
    pub queue_u: f64,
    /// Task not served: no rate, no compute, or a delay beyond the penalty.
    pub blocked: bool,
    /// Served, but the realized delay exceeded one slot.
    pub overrun: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub t: u64,
    /// Server frequency; zero in codec mode.
    pub f_c: f64,
    pub devices: Vec<DeviceSlot>,
}

impl SlotRecord {
    pub fn p_ed(&self) -> f64 {
        self.devices.iter().map(|d| d.p_cpu + d.p_tr).sum()
    }

    pub fn p_es(&self) -> f64 {
        self.devices.iter().map(|d| d.p_es).sum()
    }

    pub fn p_total(&self) -> f64 {
        self.p_ed() + self.p_es()
    }
}

/// Device decision before the server split is known.
#[derive(Debug, Clone, Copy)]
struct DevicePlan {
    setting: Setting,
    gain: f64,
    r_max: f64,
    rate: f64,
    freq: f64,
    n_bits: f64,
    w_ops: f64,
    w_es: f64,
    metric: f64,
    blocked: bool,
}

fn plan_device(sc: &Scenario, dev: &EdgeDeviceConfig, k: usize, q: &VirtualQueueState, t: u64) -> Result<DevicePlan> {
    let draw = sc.channel.sample_gain(k, t, dev.distance_m, &dev.radio)?;
    let input = EdSlotInput {
        e_t: dev.weights.epsilon * q.t[k],
        nu_u: dev.weights.nu * q.u[k],
        gain: draw.gain,
        r_max: draw.r_max,
        radio: dev.radio,
        v: dev.weights.v,
        gamma: dev.weights.gamma,
        eta: dev.cpu.eta,
        rho: dev.cpu.rho,
        f_max: dev.cpu.f_max,
    };
    let plan = match &dev.task {
        DeviceTask::Gib(table) => {
            let d = slotopt::solve_ed_gib(&input, table)?;
            let p = &table.points[d.point];
            DevicePlan {
                setting: Setting::Gib {
                    beta: d.beta,
                    point: d.point,
                },
                gain: draw.gain,
                r_max: draw.r_max,
                rate: d.rate,
                freq: d.freq,
                n_bits: p.entropy_bits,
                w_ops: table.device_ops(p),
                w_es: table.server_ops(p),
                metric: p.nmse,
                blocked: d.blocked,
            }
        }
        DeviceTask::Sqgan => {
            let d = slotopt::solve_ed_sqgan(&input, &sc.sqgan);
            let mut metric = surrogate::g_approx(d.m_x, d.m_s, &sc.sqgan.params, sc.sqgan.m_min)?;
            if sc.metric_noise_std > 0.0 {
                let mut rng = slot_rng(sc.seed, k, t, StreamPurpose::MetricNoise);
                let z: f64 = StandardNormal.sample(&mut rng);
                metric += sc.metric_noise_std * z;
            }
            DevicePlan {
                setting: Setting::Sqgan { m_x: d.m_x, m_s: d.m_s },
                gain: draw.gain,
                r_max: draw.r_max,
                rate: d.rate,
                freq: d.freq,
                n_bits: surrogate::bits_count(d.m_x, d.m_s),
                w_ops: surrogate::ops_count(d.m_x, d.m_s),
                w_es: 0.0,
                metric,
                blocked: d.blocked,
            }
        }
    };
    if !plan.metric.is_finite() || !plan.rate.is_finite() || !plan.freq.is_finite() {
        return Err(Error::Numerical(format!("device {k} slot {t}: non-finite decision")));
    }
    Ok(plan)
}

/// Work divided by speed; zero work takes no time, positive work at zero speed never ends.
fn duration(work: f64, speed: f64) -> f64 {
    if work <= 0.0 {
        0.0
    } else if speed <= 0.0 {
        f64::INFINITY
    } else {
        work / speed
    }
}

/// One slot: draws channels, solves every device (in parallel when a pool is available)
/// and the server split, then advances the queues with the realized delay and metric.
pub fn slot_step(sc: &Scenario, queues: &mut VirtualQueueState, t: u64) -> Result<SlotRecord> {
    let plans: Vec<DevicePlan> = sc
        .devices
        .par_iter()
        .enumerate()
        .map(|(k, dev)| plan_device(sc, dev, k, queues, t))
        .collect::<Result<_>>()?;

    let es = match sc.mode {
        Mode::Gib => {
            let e_t: Vec<f64> = sc
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| d.weights.epsilon * queues.t[k])
                .collect();
            slotopt::solve_es(&e_t, sc.server_ops_max(), &sc.server.rho_es, sc.server.v, sc.server.eta, sc.server.f_c_max)
        }
        Mode::Sqgan => EsDecision {
            f_c: 0.0,
            f_es: vec![0.0; sc.devices.len()],
        },
    };
    let p_server = sc.server.eta * es.f_c.powi(3);

    let mut devices = Vec::with_capacity(plans.len());
    for (k, (dev, plan)) in sc.devices.iter().zip(&plans).enumerate() {
        let f_es = es.f_es[k];
        let d_cpu = duration(plan.w_ops, plan.freq * dev.cpu.rho);
        let d_tr = duration(plan.n_bits, plan.rate);
        let d_es = match sc.mode {
            Mode::Gib => duration(plan.w_es, f_es * sc.server.rho_es[k]),
            Mode::Sqgan => 0.0,
        };
        let realized = d_cpu + d_tr + d_es;
        let penalty = BLOCKED_DELAY_FACTOR * dev.targets.d_avg;
        let blocked = plan.blocked || !(realized <= penalty);
        let delay = if blocked { penalty } else { realized };
        let p_es = if es.f_c > 0.0 { p_server * f_es / es.f_c } else { 0.0 };
        let queue_t = update_queue(queues.t[k], delay, dev.targets.d_avg, dev.weights.epsilon);
        let queue_u = update_queue(queues.u[k], plan.metric, dev.targets.g_avg, dev.weights.nu);
        devices.push(DeviceSlot {
            device: dev.id,
            setting: plan.setting,
            gain: plan.gain,
            r_max: plan.r_max,
            rate: plan.rate,
            freq: plan.freq,
            f_es,
            d_cpu: if blocked { 0.0 } else { d_cpu },
            d_tr: if blocked { 0.0 } else { d_tr },
            d_es: if blocked { 0.0 } else { d_es },
            delay,
            metric: plan.metric,
            p_cpu: dev.cpu.eta * plan.freq.powi(3),
            p_tr: transmit_power(plan.rate, plan.gain, &dev.radio),
            p_es,
            queue_t,
            queue_u,
            blocked,
            overrun: !blocked && delay > SLOT_DURATION_S,
        });
    }
    for (k, d) in devices.iter().enumerate() {
        queues.t[k] = d.queue_t;
        queues.u[k] = d.queue_u;
    }
    Ok(SlotRecord { t, f_c: es.f_c, devices })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    /// A queue crossed the divergence threshold.
    Diverged,
    /// The slot cap was reached before the queues settled.
    NotConverged,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Feasible => "feasible",
            Verdict::Diverged => "diverged",
            Verdict::NotConverged => "not_converged",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdict: Verdict,
    pub feasible: bool,
    /// Slots consumed when the queues were first judged settled.
    pub convergence_slot: Option<usize>,
    pub slots_run: usize,
    /// Slots averaged below.
    pub window: usize,
    pub p_total: f64,
    pub p_ed: f64,
    pub p_es: f64,
    pub d_avg: Vec<f64>,
    pub g_avg: Vec<f64>,
    pub blocked_slots: usize,
    pub overrun_slots: usize,
}

/// Receives slot records in order.
pub trait TraceSink {
    fn record(&mut self, rec: &SlotRecord) -> Result<()>;
}

impl TraceSink for Vec<SlotRecord> {
    fn record(&mut self, rec: &SlotRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards the trace.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &SlotRecord) -> Result<()> {
        Ok(())
    }
}

struct WindowSample {
    p_ed: f64,
    p_es: f64,
    delays: Vec<f64>,
    metrics: Vec<f64>,
    blocked: usize,
    overrun: usize,
}

fn summarize(window: &VecDeque<WindowSample>, k: usize) -> (f64, f64, f64, Vec<f64>, Vec<f64>, usize, usize) {
    let n = window.len().max(1) as f64;
    let mut d = vec![0.0; k];
    let mut g = vec![0.0; k];
    let (mut p_ed, mut p_es, mut p_total) = (0.0, 0.0, 0.0);
    let (mut blocked, mut overrun) = (0, 0);
    for s in window {
        p_ed += s.p_ed;
        p_es += s.p_es;
        p_total += s.p_ed + s.p_es;
        for i in 0..k {
            d[i] += s.delays[i];
            g[i] += s.metrics[i];
        }
        blocked += s.blocked;
        overrun += s.overrun;
    }
    d.iter_mut().chain(g.iter_mut()).for_each(|x| *x /= n);
    (p_total / n, p_ed / n, p_es / n, d, g, blocked, overrun)
}

fn diverged(sc: &Scenario, q: &VirtualQueueState) -> bool {
    sc.devices.iter().enumerate().any(|(k, d)| {
        q.t[k] > DIVERGENCE_FACTOR * d.weights.epsilon * d.targets.d_avg
            || q.u[k] > DIVERGENCE_FACTOR * d.weights.nu * d.targets.g_avg
    })
}

/// Runs until the queues settle, then for a further summary window, streaming every
/// slot to `sink`.
pub fn run_with_sink(sc: &Scenario, sink: &mut dyn TraceSink) -> Result<RunSummary> {
    sc.validate()?;
    let k = sc.devices.len();
    let mut queues = VirtualQueueState::zeros(k);
    let floors = sc
        .devices
        .iter()
        .map(|d| d.weights.epsilon * d.targets.d_avg)
        .chain(sc.devices.iter().map(|d| d.weights.nu * d.targets.g_avg))
        .collect();
    let mut detector = ConvergenceDetector::new(2 * k, sc.convergence.window, sc.convergence.tol).with_floors(floors);
    let mut window: VecDeque<WindowSample> = VecDeque::with_capacity(sc.summary_window + 1);
    let mut converged_at: Option<usize> = None;
    let mut verdict = Verdict::NotConverged;
    let mut slots = 0usize;
    let mut row = Vec::with_capacity(2 * k);

    while slots < sc.max_slots {
        let rec = slot_step(sc, &mut queues, slots as u64)?;
        sink.record(&rec)?;
        slots += 1;
        if window.len() == sc.summary_window {
            window.pop_front();
        }
        window.push_back(WindowSample {
            p_ed: rec.p_ed(),
            p_es: rec.p_es(),
            delays: rec.devices.iter().map(|d| d.delay).collect(),
            metrics: rec.devices.iter().map(|d| d.metric).collect(),
            blocked: rec.devices.iter().filter(|d| d.blocked).count(),
            overrun: rec.devices.iter().filter(|d| d.overrun).count(),
        });
        if diverged(sc, &queues) {
            verdict = Verdict::Diverged;
            break;
        }
        match converged_at {
            None => {
                row.clear();
                row.extend_from_slice(&queues.t);
                row.extend_from_slice(&queues.u);
                if let Some(c) = detector.push(&row) {
                    converged_at = Some(c);
                    window.clear();
                }
            }
            Some(c) if slots - c >= sc.summary_window => {
                verdict = Verdict::Feasible;
                break;
            }
            Some(_) => {}
        }
    }

    let (p_total, p_ed, p_es, d_avg, g_avg, blocked_slots, overrun_slots) = summarize(&window, k);
    Ok(RunSummary {
        verdict,
        feasible: verdict == Verdict::Feasible,
        convergence_slot: converged_at,
        slots_run: slots,
        window: window.len(),
        p_total,
        p_ed,
        p_es,
        d_avg,
        g_avg,
        blocked_slots,
        overrun_slots,
    })
}

/// [`run_with_sink`] keeping the full trace in memory.
pub fn run(sc: &Scenario) -> Result<(Vec<SlotRecord>, RunSummary)> {
    let mut trace = Vec::new();
    let summary = run_with_sink(sc, &mut trace)?;
    Ok((trace, summary))
}
