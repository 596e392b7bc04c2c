//! Principal branch of the Lambert W function on the non-negative reals.

use crate::error::{Error, Result};

const MAX_ITER: usize = 64;

/// Solves `w e^w = x` for `w ≥ 0` by Halley iteration started at `ln(1 + x)`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("lambert_w0 needs x ≥ 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = x.ln_1p();
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * next.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w.max(0.0))
}
