//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 60;

/// Integrate `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// Simpson bisection with Richardson correction.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) || !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "adaptive_simpson needs finite limits and positive tolerance, got [{a}, {b}], tol {tol}"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb) = (f(a), f(b));
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    Ok(recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH))
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
