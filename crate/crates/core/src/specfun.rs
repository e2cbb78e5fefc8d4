//! Real-argument gamma-family special functions.
//!
//! Each function shifts its argument up to at least [`ASYMPTOTIC_THRESHOLD`]
//! with the standard recurrence and then sums the asymptotic (Stirling)
//! series, which is accurate to a few ulps past that threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{solve_monotone, Interval};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// Even-index Bernoulli numbers B_2, B_4, ..., B_16.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// A strictly positive real number.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(PositiveReal(value))
        } else {
            Err(Error::domain("PositiveReal", value, "must be finite and > 0"))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        PositiveReal::new(v)
    }
}

impl From<PositiveReal> for f64 {
    fn from(p: PositiveReal) -> f64 {
        p.0
    }
}

fn check_positive(func: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(func, x, "must be finite and > 0"))
    }
}

/// log Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_positive("ln_gamma", x)?;
    Ok(ln_gamma_unchecked(x))
}

/// Ψ0(x) = d/dx log Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// Ψ1(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// Ψ2(x) for x > 0.
pub fn tetragamma(x: f64) -> Result<f64> {
    check_positive("tetragamma", x)?;
    Ok(tetragamma_unchecked(x))
}

pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut prod = 1.0;
    while z < ASYMPTOTIC_THRESHOLD {
        prod *= z;
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let mut series = 0.0;
    let mut pow = zi;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        series += b / (n * (n - 1.0)) * pow;
        pow *= zi2;
    }
    let stirling = (z - 0.5) * z.ln() - z + HALF_LN_2PI + series;
    if prod == 1.0 {
        stirling
    } else {
        stirling - prod.ln()
    }
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / z;
        z += 1.0;
    }
    let zi2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut pow = zi2;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        series += b / n * pow;
        pow *= zi2;
    }
    z.ln() - 0.5 / z - series - shift
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (z * z);
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let mut series = 0.0;
    let mut pow = zi2 * zi;
    for b in BERNOULLI.iter() {
        series += b * pow;
        pow *= zi2;
    }
    zi + 0.5 * zi2 + series + shift
}

pub(crate) fn tetragamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_THRESHOLD {
        shift += 2.0 / (z * z * z);
        z += 1.0;
    }
    let zi = 1.0 / z;
    let zi2 = zi * zi;
    let mut series = 0.0;
    let mut pow = zi2 * zi2;
    for (k, b) in BERNOULLI.iter().enumerate() {
        let n = 2.0 * (k as f64 + 1.0);
        series += (n + 1.0) * b * pow;
        pow *= zi2;
    }
    -(zi2 + zi2 * zi + series) - shift
}

/// The unique x > 0 with Ψ0(x) = y. Ψ0 maps (0, ∞) onto ℝ, so any finite
/// `y` is admissible.
pub fn inv_digamma(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::domain("inv_digamma", y, "must be finite"));
    }
    let guess = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        // Ψ0(x) ≈ -1/x - γ near zero
        -1.0 / (y + EULER_GAMMA)
    };
    solve_monotone(
        "inv_digamma",
        |x| (digamma_unchecked(x) - y, trigamma_unchecked(x)),
        guess,
        Interval::POSITIVE,
        true,
    )
}

/// The unique x > 0 with Ψ1(x) = y, for y > 0.
pub fn inv_trigamma(y: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::domain("inv_trigamma", y, "must be finite and > 0"));
    }
    // Ψ1(x) ≈ 1/x + 1/(2x²) for large x, ≈ 1/x² for small x
    let guess = if y > 10.0 {
        1.0 / y.sqrt()
    } else {
        (1.0 + (1.0 + 2.0 * y).sqrt()) / (2.0 * y)
    };
    solve_monotone(
        "inv_trigamma",
        |x| (trigamma_unchecked(x) - y, tetragamma_unchecked(x)),
        guess,
        Interval::POSITIVE,
        false,
    )
}

/// Regularized lower incomplete gamma P(a, x): the Γ(a, 1) distribution
/// function at x.
pub fn gamma_cdf(shape: f64, x: f64) -> Result<f64> {
    check_positive("gamma_cdf", shape)?;
    if x.is_nan() {
        return Err(Error::domain("gamma_cdf", x, "must not be NaN"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let log_prefactor = shape * x.ln() - x - ln_gamma_unchecked(shape);
    if x < shape + 1.0 {
        // power series
        let mut term = 1.0 / shape;
        let mut sum = term;
        let mut a = shape;
        for _ in 0..1000 {
            a += 1.0;
            term *= x / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                return Ok((sum.ln() + log_prefactor).exp().min(1.0));
            }
        }
        Err(Error::NoConvergence {
            what: "gamma_cdf series",
            iterations: 1000,
        })
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - shape;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - shape);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                let q = (h.ln() + log_prefactor).exp();
                return Ok((1.0 - q).max(0.0));
            }
        }
        Err(Error::NoConvergence {
            what: "gamma_cdf continued fraction",
            iterations: 1000,
        })
    }
}
