//! Grid sweeps over targets and weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_with_sink, NullSink, RunSummary};
use super::scenario::Scenario;
use crate::error::{Error, Result};

/// Axes of a sweep; an empty axis keeps the scenario's own value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub d_avg: Vec<f64>,
    #[serde(default)]
    pub g_avg: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub d_avg: Option<f64>,
    pub g_avg: Option<f64>,
    pub gamma: Option<f64>,
    pub v: Option<f64>,
}

fn axis(values: &[f64]) -> Vec<Option<f64>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.d_avg.is_empty() && self.g_avg.is_empty() && self.gamma.is_empty() && self.v.is_empty()
    }

    /// Cartesian product in `d_avg`, `g_avg`, `gamma`, `v` order (last axis fastest).
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let all = [&self.d_avg, &self.g_avg, &self.gamma, &self.v];
        if all.iter().flat_map(|a| a.iter()).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Domain("sweep values must be finite and non-negative".into()));
        }
        let mut out = Vec::new();
        for &d_avg in &axis(&self.d_avg) {
            for &g_avg in &axis(&self.g_avg) {
                for &gamma in &axis(&self.gamma) {
                    for &v in &axis(&self.v) {
                        out.push(SweepPoint { d_avg, g_avg, gamma, v });
                    }
                }
            }
        }
        Ok(out)
    }
}

impl SweepPoint {
    /// Copy of `base` with this point's overrides applied to every device.
    pub fn apply(&self, base: &Scenario) -> Scenario {
        let mut sc = base.clone();
        for d in &mut sc.devices {
            if let Some(x) = self.d_avg {
                d.targets.d_avg = x;
            }
            if let Some(x) = self.g_avg {
                d.targets.g_avg = x;
            }
            if let Some(x) = self.gamma {
                d.weights.gamma = x;
            }
        }
        if let Some(v) = self.v {
            sc.set_v(v);
        }
        sc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    /// Run summary, or the message of the error that stopped the run.
    pub outcome: std::result::Result<RunSummary, String>,
}

impl SweepRow {
    pub fn status(&self) -> &str {
        match &self.outcome {
            Ok(s) if s.feasible => "ok",
            Ok(_) => "infeasible",
            Err(_) => "error",
        }
    }
}

/// One run per grid point. Failures are recorded in the row and do not stop the sweep.
pub fn sweep(base: &Scenario, grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let points = grid.points()?;
    Ok(points
        .par_iter()
        .map(|p| SweepRow {
            point: *p,
            outcome: run_with_sink(&p.apply(base), &mut NullSink).map_err(|e| e.to_string()),
        })
        .collect())
}
