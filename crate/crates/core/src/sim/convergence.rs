//! Queue convergence test over consecutive windows.

/// Relative change of two window means at most `tol`, or an absolute change at most
/// `floor`. Two zero means count as unchanged.
fn settled(m1: f64, m2: f64, tol: f64, floor: f64) -> bool {
    let diff = (m2 - m1).abs();
    diff <= tol * m1.abs().max(m2.abs()) || diff <= floor
}

/// Earliest slot count `t ≥ 2w` at which, for every queue, the mean over `[t−w, t)`
/// differs from the mean over `[t−2w, t−w)` by at most `tol` relative.
///
/// `series[s]` holds all queue values after slot `s`.
pub fn detect_convergence(series: &[Vec<f64>], window: usize, tol: f64) -> Option<usize> {
    let queues = series.first()?.len();
    let mut det = ConvergenceDetector::new(queues, window, tol);
    series.iter().find_map(|row| det.push(row))
}

/// Incremental form of [`detect_convergence`] with O(queues) work per slot.
#[derive(Debug, Clone)]
pub struct ConvergenceDetector {
    window: usize,
    tol: f64,
    floors: Vec<f64>,
    history: Vec<Vec<f64>>,
    // sums over [t−w, t) and [t−2w, t−w)
    recent: Vec<f64>,
    older: Vec<f64>,
    seen: usize,
}

impl ConvergenceDetector {
    pub fn new(queues: usize, window: usize, tol: f64) -> Self {
        assert!(window > 0);
        Self {
            window,
            tol,
            floors: vec![0.0; queues],
            history: Vec::with_capacity(2 * window),
            recent: vec![0.0; queues],
            older: vec![0.0; queues],
            seen: 0,
        }
    }

    /// Absolute changes up to `floors[q]` also count as settled; queues resting near
    /// zero otherwise never pass a relative test.
    pub fn with_floors(mut self, floors: Vec<f64>) -> Self {
        assert_eq!(floors.len(), self.floors.len());
        self.floors = floors;
        self
    }

    pub fn slots_seen(&self) -> usize {
        self.seen
    }

    /// Feeds the queues after the next slot; returns the slot count when the test passes.
    pub fn push(&mut self, row: &[f64]) -> Option<usize> {
        let w = self.window;
        let ring = 2 * w;
        let pos = self.seen % ring;
        if self.seen >= w {
            // leaves the recent window, enters the older one
            let mid = &self.history[(self.seen - w) % ring];
            for (k, &x) in mid.iter().enumerate() {
                self.recent[k] -= x;
                self.older[k] += x;
            }
        }
        if self.seen >= ring {
            let gone = std::mem::replace(&mut self.history[pos], row.to_vec());
            for (k, x) in gone.into_iter().enumerate() {
                self.older[k] -= x;
            }
        } else {
            self.history.push(row.to_vec());
        }
        for (k, &x) in row.iter().enumerate() {
            self.recent[k] += x;
        }
        self.seen += 1;
        if self.seen < ring {
            return None;
        }
        let w = self.window as f64;
        self.older
            .iter()
            .zip(&self.recent)
            .zip(&self.floors)
            .all(|((&a, &b), &floor)| settled(a / w, b / w, self.tol, floor))
            .then_some(self.seen)
    }
}
