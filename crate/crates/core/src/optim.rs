//! One-dimensional root finding and minimization on open intervals.
//!
//! Everything here assumes monotone (for roots) or unimodal (for minima)
//! objectives; the bracket expansion walks geometrically toward infinite
//! ends and bisects toward finite ones.

use crate::error::{Error, Result};

/// Shared iteration budget for every bracketed solver in the crate.
pub const MAX_ITER: usize = 200;

const GOLDEN: f64 = 0.381_966_011_250_105_1; // 2 - phi

/// Open interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    pub const POSITIVE: Interval = Interval {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    /// Next probe point moving from `x` upward (`up = true`) or downward.
    /// `step` is the current additive step for doubly infinite intervals.
    fn advance(&self, x: f64, up: bool, step: &mut f64) -> f64 {
        let (bound, other) = if up { (self.hi, self.lo) } else { (self.lo, self.hi) };
        let sign = if up { 1.0 } else { -1.0 };
        if bound.is_finite() {
            // halve the distance to the finite end
            bound - (bound - x) * 0.5
        } else if other.is_finite() {
            // moving toward the infinite end: double the distance from the finite one
            other + 2.0 * (x - other)
        } else {
            let next = x + sign * *step;
            *step *= 2.0;
            next
        }
    }
}

/// Solve `f(x) = 0` for a strictly monotone `f` on `interval`.
///
/// `f` returns `(value, derivative)`. The bracket is grown from `guess`
/// and then refined by Newton steps that fall back to bisection whenever
/// a step leaves the bracket or stalls.
pub fn solve_monotone<F>(
    what: &'static str,
    f: F,
    guess: f64,
    interval: Interval,
    increasing: bool,
) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    if !interval.contains(guess) {
        return Err(Error::Precondition(format!(
            "{what}: initial guess {guess} outside ({}, {})",
            interval.lo, interval.hi
        )));
    }
    let orient = |v: f64| if increasing { v } else { -v };

    let mut iterations = 0usize;
    let (mut a, mut fa) = (guess, orient(f(guess).0));
    if fa == 0.0 {
        return Ok(a);
    }
    // root lies above `a` when the oriented value is negative
    let up = fa < 0.0;
    let mut step = guess.abs().max(1.0);
    let (mut b, mut fb);
    loop {
        iterations += 1;
        if iterations > MAX_ITER {
            return Err(Error::NoConvergence {
                what,
                iterations: MAX_ITER,
            });
        }
        b = interval.advance(a, up, &mut step);
        if !b.is_finite() || b == a {
            return Err(Error::NoConvergence { what, iterations });
        }
        fb = orient(f(b).0);
        if fb == 0.0 {
            return Ok(b);
        }
        if (fb > 0.0) == up {
            break;
        }
        a = b;
        fa = fb;
    }
    let _ = fa;

    // invariant: oriented f(lo) < 0 < oriented f(hi)
    let (mut lo, mut hi) = if up { (a, b) } else { (b, a) };
    let mut x = 0.5 * (lo + hi);
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (v, d) = f(x);
    let (mut fx, mut dfx) = (orient(v), orient(d));
    while iterations < MAX_ITER {
        iterations += 1;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton_ok = dfx > 0.0 && {
            let cand = x - fx / dfx;
            cand > lo && cand < hi && (2.0 * fx).abs() <= (dx_old * dfx).abs()
        };
        dx_old = dx;
        let next = if newton_ok {
            dx = fx / dfx;
            x - dx
        } else {
            dx = 0.5 * (hi - lo);
            lo + dx
        };
        let tol = 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE);
        if (next - x).abs() <= tol || (hi - lo) <= tol {
            return Ok(next);
        }
        x = next;
        let (v, d) = f(x);
        fx = orient(v);
        dfx = orient(d);
    }
    Err(Error::NoConvergence {
        what,
        iterations: MAX_ITER,
    })
}

/// Result of a one-dimensional minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub arg: f64,
    pub value: f64,
}

/// Minimize a unimodal `f` on the open `interval`.
///
/// Brackets the minimum by walking outward from `guess`, runs golden
/// section down to a relative width of 1e-12 and, when `derivs` supplies
/// `(f', f'')`, takes one safeguarded Newton polish step.
pub fn minimize_unimodal<F>(
    what: &'static str,
    f: F,
    guess: f64,
    interval: Interval,
    derivs: Option<&dyn Fn(f64) -> (f64, f64)>,
) -> Result<Minimum>
where
    F: Fn(f64) -> f64,
{
    let (a, b, c) = bracket_minimum(what, &f, guess, interval)?;
    let mut m = golden_section(&f, a, b, c);
    if let Some(d) = derivs {
        let (g, h) = d(m.arg);
        if h > 0.0 && g.is_finite() {
            let cand = m.arg - g / h;
            let (lo, hi) = (a.min(c), a.max(c));
            if cand > lo && cand < hi {
                let v = f(cand);
                if v <= m.value {
                    m = Minimum { arg: cand, value: v };
                }
            }
        }
    }
    Ok(m)
}

/// Find `a < b < c` (or reversed) inside `interval` with `f(b) <= f(a), f(c)`.
pub fn bracket_minimum<F>(
    what: &'static str,
    f: &F,
    guess: f64,
    interval: Interval,
) -> Result<(f64, f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !interval.contains(guess) {
        return Err(Error::Bracket {
            what,
            detail: format!("guess {guess} outside ({}, {})", interval.lo, interval.hi),
        });
    }
    let mut step_up = guess.abs().max(1.0) * 0.1;
    let mut step_down = step_up;
    let fb0 = f(guess);
    let up_probe = interval.advance(guess, true, &mut step_up);
    let fu = f(up_probe);
    // walk in the descending direction
    let up = fu < fb0;
    let (mut prev, mut fprev, mut cur, mut fcur) = if up {
        (guess, fb0, up_probe, fu)
    } else {
        let down_probe = interval.advance(guess, false, &mut step_down);
        let fd = f(down_probe);
        if fd >= fb0 && fu >= fb0 {
            return Ok((down_probe, guess, up_probe));
        }
        (guess, fb0, down_probe, fd)
    };
    let step = if up { &mut step_up } else { &mut step_down };
    for _ in 0..MAX_ITER {
        let next = interval.advance(cur, up, step);
        if !interval.contains(next) || next == cur {
            break;
        }
        let fnext = f(next);
        if fnext > fcur && fcur.is_finite() {
            return Ok((prev, cur, next));
        }
        prev = cur;
        fprev = fcur;
        cur = next;
        fcur = fnext;
    }
    let _ = fprev;
    Err(Error::Bracket {
        what,
        detail: format!(
            "objective kept decreasing toward the {} end of ({}, {})",
            if up { "upper" } else { "lower" },
            interval.lo,
            interval.hi
        ),
    })
}

/// Golden-section search on a bracket `(a, b, c)` with `f(b)` minimal.
pub fn golden_section<F>(f: &F, a: f64, b: f64, c: f64) -> Minimum
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (a.min(c), a.max(c));
    let mut x = b;
    let mut fx = f(x);
    for _ in 0..MAX_ITER {
        let tol = (1e-12 * x.abs().max(1.0)).max(4.0 * f64::EPSILON * x.abs());
        if hi - lo <= tol {
            break;
        }
        // probe inside the larger sub-interval
        let (u, right) = if hi - x > x - lo {
            (x + GOLDEN * (hi - x), true)
        } else {
            (x - GOLDEN * (x - lo), false)
        };
        let fu = f(u);
        if fu < fx {
            if right {
                lo = x;
            } else {
                hi = x;
            }
            x = u;
            fx = fu;
        } else if right {
            hi = u;
        } else {
            lo = u;
        }
    }
    Minimum { arg: x, value: fx }
}
