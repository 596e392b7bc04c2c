//! Cost and distortion model of the masked vector-quantized image codec.
//!
//! Compute and transmit size are linear in the total masking fraction `m_x + m_s`;
//! distortion follows the separable surrogate `a / m_x^b + c / m_s`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible masking fraction; keeps `c / m_s` finite.
pub const M_MIN: f64 = 1e-4;

/// Operations for one 256-dimensional squared distance: `256·3 + 1`.
pub const DISTANCE_OPS: u64 = 256 * 3 + 1;
pub const CODEBOOK_SIZE: u64 = 1024;
/// Latent vectors per image before masking.
pub const MAX_VECTORS: u64 = 512;
/// Quantization operations at `m_x + m_s = 1`.
pub const OPS_PER_UNIT_MASK: u64 = DISTANCE_OPS * (CODEBOOK_SIZE - 1) * MAX_VECTORS;
/// Pixels of one image, `256 · 512`.
pub const IMAGE_PIXELS: u64 = 131_072;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_residual: Option<f64>,
}

impl SurrogateParams {
    /// LPIPS fit of the reference codec.
    pub const REFERENCE: SurrogateParams = SurrogateParams {
        a: 2.58e-1,
        b: 1.20e-1,
        c: 2.95e-3,
        fit_residual: None,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            c,
            fit_residual: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("surrogate parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPair {
    pub m_x: f64,
    pub m_s: f64,
}

impl MaskPair {
    pub fn new(m_x: f64, m_s: f64, m_min: f64) -> Result<Self> {
        for (name, m) in [("m_x", m_x), ("m_s", m_s)] {
            if !(m >= m_min && m <= 1.0) {
                return Err(Error::Domain(format!("{name} = {m} outside [{m_min}, 1]")));
            }
        }
        Ok(Self { m_x, m_s })
    }

    pub fn total(&self) -> f64 {
        self.m_x + self.m_s
    }
}

/// Vector-quantization operations: `769 · 1023 · 512 · (m_x + m_s)`.
pub fn ops_count(m_x: f64, m_s: f64) -> f64 {
    OPS_PER_UNIT_MASK as f64 * (m_x + m_s)
}

/// Transmitted bits: `512 · [10 (m_x + m_s) + 2]`.
pub fn bits_count(m_x: f64, m_s: f64) -> f64 {
    MAX_VECTORS as f64 * (10.0 * (m_x + m_s) + 2.0)
}

/// Bits per pixel `(10 (m_x + m_s) + 2) / 256`.
pub fn bpp(m_x: f64, m_s: f64) -> f64 {
    (10.0 * (m_x + m_s) + 2.0) / 256.0
}

/// `a / m_x^b + c / m_s`.
pub fn g_approx(m_x: f64, m_s: f64, p: &SurrogateParams, m_min: f64) -> Result<f64> {
    if !(m_x >= m_min) || !(m_s >= m_min) {
        return Err(Error::Domain(format!(
            "masks ({m_x}, {m_s}) fall below the floor {m_min}"
        )));
    }
    Ok(g_unchecked(m_x, m_s, p))
}

pub(crate) fn g_unchecked(m_x: f64, m_s: f64, p: &SurrogateParams) -> f64 {
    p.a * m_x.powf(-p.b) + p.c / m_s
}

/// `(∂G/∂m_x, ∂G/∂m_s)`.
pub fn g_gradient(m_x: f64, m_s: f64, p: &SurrogateParams) -> (f64, f64) {
    (-p.a * p.b * m_x.powf(-p.b - 1.0), -p.c / (m_s * m_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    /// `(a/c)^{1/b} m_s^{2/b}`.
    Paper,
    /// First-order condition `(ab/c)^{1/(1+b)} m_s^{2/(1+b)}`.
    #[default]
    Stationary,
}

/// Image mask that balances the marginal distortion gains of both masks, clipped to `[m_min, 1]`.
pub fn m_x_reduction(m_s: f64, p: &SurrogateParams, mode: ReductionMode, m_min: f64) -> f64 {
    // evaluated in log space: (a/c)^{1/b} overflows f64 for moderate m_s
    let log_mx = match mode {
        ReductionMode::Paper => ((p.a / p.c).ln() + 2.0 * m_s.ln()) / p.b,
        ReductionMode::Stationary => ((p.a * p.b / p.c).ln() + 2.0 * m_s.ln()) / (1.0 + p.b),
    };
    log_mx.exp().clamp(m_min, 1.0)
}

/// One observation of the measured distortion surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub m_x: f64,
    pub m_s: f64,
    pub distortion: f64,
}

const FIT_MAX_ITER: usize = 500;

/// Least-squares fit of `(a, b, c)`: damped Gauss-Newton in the original space, started
/// from a log-space linear regression.
pub fn fit(samples: &[FitSample]) -> Result<SurrogateParams> {
    if samples.len() < 6 {
        return Err(Error::Fit(format!("need at least 6 samples, got {}", samples.len())));
    }
    if samples
        .iter()
        .any(|s| !(s.m_x > 0.0 && s.m_s > 0.0 && s.distortion.is_finite()))
    {
        return Err(Error::Fit("masks must be positive and distortions finite".into()));
    }
    if distinct(samples.iter().map(|s| s.m_x)) < 2 {
        return Err(Error::Fit("all samples share one m_x value: a and b are unidentifiable".into()));
    }
    if distinct(samples.iter().map(|s| s.m_s)) < 2 {
        return Err(Error::Fit("all samples share one m_s value: c is unidentifiable".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.distortion).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.distortion - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Err(Error::Fit("flat distortion surface: exponent b collapses to 0".into()));
    }

    let theta = levenberg_marquardt(samples, log_space_seed(samples))?;
    let residual = mse(samples, &theta);
    if theta.y < 1e-6 {
        return Err(Error::Fit(format!("degenerate fit: b = {:.3e} → 0", theta.y)));
    }
    let mut params = SurrogateParams::new(theta.x, theta.y, theta.z)
        .map_err(|e| Error::Fit(format!("fit left the positive orthant: {e}")))?;
    params.fit_residual = Some(residual);
    Ok(params)
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// `c` from a regression of G on `1/m_s`, then `(a, b)` from `log(G − c/m_s) = log a − b log m_x`.
fn log_space_seed(samples: &[FitSample]) -> Vector3<f64> {
    let (k, c) = linear_fit(samples.iter().map(|s| (1.0 / s.m_s, s.distortion)));
    let c = if c > 0.0 { c } else { 1e-3 * k.abs().max(1e-6) };
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| {
            let y = s.distortion - c / s.m_s;
            (y > 0.0).then(|| (s.m_x.ln(), y.ln()))
        })
        .collect();
    let (log_a, slope) = if pts.len() >= 2 {
        linear_fit(pts.into_iter())
    } else {
        (k.abs().max(1e-6).ln(), -0.1)
    };
    let b = (-slope).clamp(1e-3, 5.0);
    Vector3::new(log_a.exp(), b, c)
}

/// Ordinary least squares `y = intercept + slope · x`.
fn linear_fit(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = points.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn model(s: &FitSample, t: &Vector3<f64>) -> f64 {
    t.x * s.m_x.powf(-t.y) + t.z / s.m_s
}

fn mse(samples: &[FitSample], t: &Vector3<f64>) -> f64 {
    samples
        .iter()
        .map(|s| (s.distortion - model(s, t)).powi(2))
        .sum::<f64>()
        / samples.len() as f64
}

fn levenberg_marquardt(samples: &[FitSample], mut theta: Vector3<f64>) -> Result<Vector3<f64>> {
    let mut damping = 1e-3;
    let mut cost = mse(samples, &theta);
    for _ in 0..FIT_MAX_ITER {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for s in samples {
            let px = s.m_x.powf(-theta.y);
            let j = Vector3::new(px, -theta.x * s.m_x.ln() * px, 1.0 / s.m_s);
            let r = s.distortion - model(s, &theta);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj;
            for i in 0..3 {
                lhs[(i, i)] += damping * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = lhs.lu().solve(&jtr) else {
                damping *= 10.0;
                continue;
            };
            let candidate = theta + step;
            let c = mse(samples, &candidate);
            if c.is_finite() && c < cost {
                let rel_step = step.abs().component_div(&theta.abs().add_scalar(1e-300)).max();
                theta = candidate;
                cost = c;
                damping = (damping * 0.3).max(1e-15);
                improved = true;
                if rel_step < 1e-14 || cost < 1e-32 {
                    return Ok(theta);
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit("Gauss-Newton iterates diverged".into()));
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const P: SurrogateParams = SurrogateParams::REFERENCE;

    #[test]
    fn ops_constant() {
        assert_eq!(769 * 1023 * 512, 402_783_744u64);
        assert_eq!(OPS_PER_UNIT_MASK, 402_783_744);
        assert_eq!(ops_count(0.3, 0.7), 402_783_744.0);
        assert_relative_eq!(ops_count(M_MIN, M_MIN), 80_556.7488, epsilon = 1e-6);
    }

    #[test]
    fn bits_examples() {
        assert_eq!(bits_count(1.0, 1.0), 11_264.0);
        assert_eq!(bits_count(0.0, 0.0), 1024.0);
        assert_relative_eq!(bpp(1.0, 1.0), 0.0859375, epsilon = 1e-15);
        assert_relative_eq!(bits_count(1.0, 1.0) / IMAGE_PIXELS as f64, bpp(1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn g_examples() {
        assert_relative_eq!(g_approx(1.0, 1.0, &P, M_MIN).unwrap(), 0.26095, epsilon = 1e-12);
        let full = g_approx(0.3, 0.5, &P, M_MIN).unwrap();
        let half = g_approx(0.3, 0.25, &P, M_MIN).unwrap();
        assert_relative_eq!(half - full, P.c / 0.5, epsilon = 1e-15);
        let g = g_approx(0.5, 1.0, &P, M_MIN).unwrap();
        assert_relative_eq!(g, 0.258 * 2f64.powf(0.12) + 0.00295, epsilon = 1e-15);
        assert_relative_eq!(g, 0.283328, epsilon = 1e-6);
        assert!(g_approx(1e-5, 0.5, &P, M_MIN).is_err());
        assert!(g_approx(0.5, 0.0, &P, M_MIN).is_err());
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(m_x_reduction(0.5, &P, ReductionMode::Paper, M_MIN), 1.0);
        let unclipped = ((P.a / P.c).ln() + 2.0 * 0.05f64.ln()) / P.b;
        assert_relative_eq!(unclipped.exp(), 3.15e-6, max_relative = 0.01);
        assert_eq!(m_x_reduction(0.05, &P, ReductionMode::Paper, M_MIN), M_MIN);

        let oracle = (P.a * P.b / P.c).powf(1.0 / 1.12) * 0.05f64.powf(2.0 / 1.12);
        let got = m_x_reduction(0.05, &P, ReductionMode::Stationary, M_MIN);
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
        assert_relative_eq!(got, 0.0387, epsilon = 1e-4);
    }

    #[test]
    fn stationary_reduction_balances_marginal_gains() {
        // at the reduced m_x the two marginal distortion gains equal the same shadow price
        for &m_s in &[0.01, 0.05, 0.1, 0.2] {
            let m_x = m_x_reduction(m_s, &P, ReductionMode::Stationary, M_MIN);
            if m_x <= M_MIN || m_x >= 1.0 {
                continue;
            }
            let (gx, gs) = g_gradient(m_x, m_s, &P);
            assert_relative_eq!(gx, gs, max_relative = 1e-10);
        }
    }

    fn grid_samples(p: &SurrogateParams) -> Vec<FitSample> {
        let mut v = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                let m_x = 0.05 + 0.95 * i as f64 / 9.0;
                let m_s = 0.05 + 0.95 * j as f64 / 9.0;
                v.push(FitSample {
                    m_x,
                    m_s,
                    distortion: g_unchecked(m_x, m_s, p),
                });
            }
        }
        v
    }

    #[test]
    fn fit_recovers_reference_params() {
        let fitted = fit(&grid_samples(&P)).unwrap();
        assert_relative_eq!(fitted.a, P.a, max_relative = 0.01);
        assert_relative_eq!(fitted.b, P.b, max_relative = 0.01);
        assert_relative_eq!(fitted.c, P.c, max_relative = 0.01);
        assert!(fitted.fit_residual.unwrap() < 1e-10);
    }

    #[test]
    fn fit_rejects_degenerate_sets() {
        let mut single_ms = grid_samples(&P);
        for s in &mut single_ms {
            s.m_s = 0.5;
        }
        assert!(matches!(fit(&single_ms), Err(Error::Fit(_))));

        let mut flat = grid_samples(&P);
        for s in &mut flat {
            s.distortion = 0.3;
        }
        let err = fit(&flat).unwrap_err();
        assert!(err.to_string().contains("b"), "{err}");

        assert!(fit(&grid_samples(&P)[..5]).is_err());
    }

    #[test]
    fn mask_pair_domain() {
        assert!(MaskPair::new(0.5, 0.5, M_MIN).is_ok());
        assert!(MaskPair::new(0.0, 0.5, M_MIN).is_err());
        assert!(MaskPair::new(0.5, 1.5, M_MIN).is_err());
    }
}
