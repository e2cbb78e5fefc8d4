//! Closed-form large-deviation quantities of the semi-discrete polymer.
//!
//! Free energy ρ(s,t), moment Lyapunov exponents Λ_{s,t}(ξ), the rate
//! function I_{s,t}, the stationary-model rate functions U and R with their
//! conjugates, the GUE right-tail rate, and the inf-convolution pieces G and
//! H whose minimum over the split point reproduces U.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::convex::{fmt_real, inf_convolution, inf_convolution_at, legendre_transform, GridSpec, SampledFunction};
use crate::error::{Error, Result};
use crate::optim::{minimize_unimodal, solve_monotone, Interval};
use crate::report::{Check, VerificationReport};
use crate::specfun::{
    digamma_unchecked as psi0, inv_digamma, inv_trigamma, ln_gamma_unchecked as lng, trigamma_unchecked as psi1,
    PositiveReal,
};

/// Direction `(s, t)`: `s` lines per unit of `n`, time `t` per unit of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub s: PositiveReal,
    pub t: PositiveReal,
}

impl Shape {
    pub fn new(s: f64, t: f64) -> Result<Self> {
        Ok(Shape {
            s: PositiveReal::new(s)?,
            t: PositiveReal::new(t)?,
        })
    }

    #[inline]
    pub fn s(&self) -> f64 {
        self.s.get()
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t.get()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Shape::new(c * self.s(), c * self.t())
    }
}

/// Boundary parameter θ and moment exponent ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltParams {
    pub theta: PositiveReal,
    pub xi: f64,
}

impl TiltParams {
    pub fn new(theta: f64, xi: f64) -> Result<Self> {
        if !xi.is_finite() {
            return Err(Error::domain("TiltParams", xi, "xi must be finite"));
        }
        Ok(TiltParams {
            theta: PositiveReal::new(theta)?,
            xi,
        })
    }

    /// Admissible for the θ-parameterized conjugates: `0 <= ξ < θ`.
    pub fn is_dual_admissible(&self) -> bool {
        self.xi >= 0.0 && self.xi < self.theta.get()
    }
}

/// θ* = Ψ1⁻¹(t/s), the minimizer in the free-energy formula.
pub fn free_energy_minimizer(shape: Shape) -> Result<f64> {
    inv_trigamma(shape.t() / shape.s())
}

/// ρ(s,t) = min_{θ>0} {θt − sΨ0(θ)}.
pub fn free_energy(shape: Shape) -> Result<f64> {
    let th = free_energy_minimizer(shape)?;
    Ok(shape.t() * th - shape.s() * psi0(th))
}

/// Solution of the first-order condition tξ = s(Ψ0(μ+ξ) − Ψ0(μ)), ξ > 0.
fn solve_mu(shape: Shape, xi: f64, guess: Option<f64>) -> Result<f64> {
    let (s, t) = (shape.s(), shape.t());
    // Ψ0(μ+ξ) − Ψ0(μ) ≈ ξ/(μ + ξ/2) for large μ and ≈ 1/μ for small μ
    let g = guess.unwrap_or_else(|| {
        let large = s / t - 0.5 * xi;
        if large > 0.5 {
            large
        } else {
            (s / (t * xi)).min(0.5)
        }
    });
    solve_monotone(
        "lyapunov first-order condition",
        |mu| {
            (
                t * xi - s * (psi0(mu + xi) - psi0(mu)),
                s * (psi1(mu) - psi1(mu + xi)),
            )
        },
        g,
        Interval::POSITIVE,
        true,
    )
}

/// Λ_{s,t}(ξ) together with its optimizer and first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovPoint {
    pub xi: f64,
    pub value: f64,
    /// μ*(ξ) for ξ > 0; `None` on the linear branch.
    pub mu: Option<f64>,
    pub slope: f64,
    pub curvature: f64,
}

fn lyapunov_point(shape: Shape, xi: f64, rho: f64, guess: Option<f64>) -> Result<LyapunovPoint> {
    if !xi.is_finite() {
        return Err(Error::domain("lyapunov", xi, "must be finite"));
    }
    if xi <= 0.0 {
        return Ok(LyapunovPoint {
            xi,
            value: xi * rho,
            mu: None,
            slope: rho,
            curvature: 0.0,
        });
    }
    let (s, t) = (shape.s(), shape.t());
    let mu = solve_mu(shape, xi, guess)?;
    let value = t * (0.5 * xi * xi + xi * mu) - s * (lng(mu + xi) - lng(mu));
    // envelope theorem for the slope; eliminate μ for the curvature
    let slope = t * (xi + mu) - s * psi0(mu + xi);
    let f_xx = t - s * psi1(mu + xi);
    let f_mm = s * (psi1(mu) - psi1(mu + xi));
    let curvature = f_xx - f_xx * f_xx / f_mm;
    Ok(LyapunovPoint {
        xi,
        value,
        mu: Some(mu),
        slope,
        curvature,
    })
}

/// Λ_{s,t}(ξ): ξρ(s,t) for ξ ≤ 0, and for ξ > 0
/// min_{μ>0} {t(ξ²/2 + ξμ) − s log(Γ(μ+ξ)/Γ(μ))}.
pub fn lyapunov(shape: Shape, xi: f64) -> Result<f64> {
    Ok(lyapunov_detail(shape, xi)?.value)
}

pub fn lyapunov_detail(shape: Shape, xi: f64) -> Result<LyapunovPoint> {
    let rho = if xi <= 0.0 { free_energy(shape)? } else { f64::NAN };
    lyapunov_point(shape, xi, rho, None)
}

/// Λ on every node of `grid`, warm-starting each root solve from the last.
pub fn lyapunov_sampled(shape: Shape, grid: GridSpec) -> Result<SampledFunction> {
    let rho = free_energy(shape)?;
    let mut prev_mu = None;
    let mut values = Vec::with_capacity(grid.n);
    for xi in grid.nodes() {
        let p = lyapunov_point(shape, xi, rho, prev_mu)?;
        prev_mu = p.mu;
        values.push(p.value);
    }
    SampledFunction::new(grid, values)
}

/// Optimizer and value of a variational problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalSolution {
    pub theta: f64,
    pub value: f64,
}

type RealFn<'a> = Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>;

/// min_{θ∈I} { x·h(θ) + y·g(θ) } with h increasing and g decreasing on I.
///
/// Derivatives default to central finite differences; supply them when
/// available to sharpen the final Newton step.
pub struct VariationalSpec<'a> {
    pub h: RealFn<'a>,
    pub g: RealFn<'a>,
    pub dh: Option<RealFn<'a>>,
    pub dg: Option<RealFn<'a>>,
    pub d2h: Option<RealFn<'a>>,
    pub d2g: Option<RealFn<'a>>,
    pub interval: Interval,
    pub x: PositiveReal,
    pub y: PositiveReal,
    pub guess: Option<f64>,
}

impl<'a> VariationalSpec<'a> {
    pub fn new<H, G>(h: H, g: G, interval: Interval, x: f64, y: f64) -> Result<Self>
    where
        H: Fn(f64) -> f64 + Send + Sync + 'a,
        G: Fn(f64) -> f64 + Send + Sync + 'a,
    {
        if !(interval.lo < interval.hi) {
            return Err(Error::Precondition(format!(
                "empty interval ({}, {})",
                interval.lo, interval.hi
            )));
        }
        Ok(VariationalSpec {
            h: Box::new(h),
            g: Box::new(g),
            dh: None,
            dg: None,
            d2h: None,
            d2g: None,
            interval,
            x: PositiveReal::new(x)?,
            y: PositiveReal::new(y)?,
            guess: None,
        })
    }

    pub fn with_derivatives<A, B, C, D>(mut self, dh: A, dg: B, d2h: C, d2g: D) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'a,
        B: Fn(f64) -> f64 + Send + Sync + 'a,
        C: Fn(f64) -> f64 + Send + Sync + 'a,
        D: Fn(f64) -> f64 + Send + Sync + 'a,
    {
        self.dh = Some(Box::new(dh));
        self.dg = Some(Box::new(dg));
        self.d2h = Some(Box::new(d2h));
        self.d2g = Some(Box::new(d2g));
        self
    }

    pub fn with_guess(mut self, guess: f64) -> Self {
        self.guess = Some(guess);
        self
    }

    pub fn objective(&self, th: f64) -> f64 {
        self.x.get() * (self.h)(th) + self.y.get() * (self.g)(th)
    }

    fn fd_step(&self, th: f64) -> f64 {
        let mut h = 1e-5 * th.abs().max(1.0);
        let room = (th - self.interval.lo).min(self.interval.hi - th);
        if room.is_finite() {
            h = h.min(0.5 * room);
        }
        h
    }

    fn first(&self, th: f64, exact: &Option<RealFn<'a>>, f: &RealFn<'a>) -> f64 {
        match exact {
            Some(d) => d(th),
            None => {
                let h = self.fd_step(th);
                (f(th + h) - f(th - h)) / (2.0 * h)
            }
        }
    }

    fn second(&self, th: f64, exact: &Option<RealFn<'a>>, f: &RealFn<'a>) -> f64 {
        match exact {
            Some(d) => d(th),
            None => {
                let h = self.fd_step(th) * 10.0;
                let h = h.min(0.5 * (th - self.interval.lo).min(self.interval.hi - th));
                (f(th + h) - 2.0 * f(th) + f(th - h)) / (h * h)
            }
        }
    }

    /// (f', f'') of the objective.
    pub fn derivatives(&self, th: f64) -> (f64, f64) {
        let (x, y) = (self.x.get(), self.y.get());
        let d1 = x * self.first(th, &self.dh, &self.h) + y * self.first(th, &self.dg, &self.g);
        let d2 = x * self.second(th, &self.d2h, &self.h) + y * self.second(th, &self.d2g, &self.g);
        (d1, d2)
    }

    /// Checks h' > 0, g' < 0 and strict convexity of the objective at the
    /// given points of the interval.
    pub fn validate(&self, points: &[f64]) -> Result<()> {
        for &p in points {
            if !self.interval.contains(p) {
                return Err(Error::Precondition(format!("sample point {p} outside the interval")));
            }
            let dh = self.first(p, &self.dh, &self.h);
            let dg = self.first(p, &self.dg, &self.g);
            if !(dh > 0.0) || !(dg < 0.0) {
                return Err(Error::Precondition(format!(
                    "need h' > 0 > g' at {p}, got h' = {dh}, g' = {dg}"
                )));
            }
            if !(self.derivatives(p).1 > 0.0) {
                return Err(Error::Precondition(format!("objective not strictly convex at {p}")));
            }
        }
        Ok(())
    }

    fn default_guess(&self) -> f64 {
        let Interval { lo, hi } = self.interval;
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + lo.abs().max(1.0),
            (false, true) => hi - hi.abs().max(1.0),
            (false, false) => 0.0,
        }
    }
}

/// Minimizes x·h + y·g on I: bracket, golden section, then Newton on the
/// first-order condition x·h' + y·g' = 0.
pub fn solve_variational(spec: &VariationalSpec<'_>) -> Result<VariationalSolution> {
    let guess = spec.guess.unwrap_or_else(|| spec.default_guess());
    let f = |th: f64| spec.objective(th);
    let derivs = |th: f64| spec.derivatives(th);
    let m = minimize_unimodal("variational objective", f, guess, spec.interval, Some(&derivs))?;
    let polished = solve_monotone("variational first-order condition", derivs, m.arg, spec.interval, true);
    let theta = match polished {
        Ok(th) if f(th) <= m.value + 1e-12 * m.value.abs().max(1.0) => th,
        _ => m.arg,
    };
    Ok(VariationalSolution {
        theta,
        value: f(theta),
    })
}

/// Λ_{s,t}(ξ) for ξ > 0 in the θ = μ + ξ parameterization,
/// min_{θ>ξ} {t(−ξ²/2 + θξ) + s log(Γ(θ−ξ)/Γ(θ))}, solved generically.
pub fn lyapunov_dual_form(shape: Shape, xi: f64) -> Result<f64> {
    Ok(lyapunov_dual_minimizer(shape, xi)?.value)
}

pub fn lyapunov_dual_minimizer(shape: Shape, xi: f64) -> Result<VariationalSolution> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::domain("lyapunov_dual_form", xi, "must be > 0"));
    }
    let (s, t) = (shape.s(), shape.t());
    let spec = VariationalSpec::new(
        move |th| -0.5 * xi * xi + th * xi,
        move |th| lng(th - xi) - lng(th),
        Interval::new(xi, f64::INFINITY),
        t,
        s,
    )?
    .with_derivatives(
        move |_| xi,
        move |th| psi0(th - xi) - psi0(th),
        |_| 0.0,
        move |th| psi1(th - xi) - psi1(th),
    )
    .with_guess(xi + (s / t - 0.5 * xi).max((s / (t * xi)).min(0.5)));
    solve_variational(&spec)
}

/// I_{s,t}(x): +∞ below ρ(s,t), otherwise sup_{ξ≥0} {ξx − Λ_{s,t}(ξ)}.
pub fn rate_function(shape: Shape, x: f64) -> Result<f64> {
    Ok(rate_function_detail(shape, x)?.0)
}

/// The rate together with its maximizing ξ (0 at and below ρ).
pub fn rate_function_detail(shape: Shape, x: f64) -> Result<(f64, f64)> {
    if x.is_nan() {
        return Err(Error::domain("rate_function", x, "must not be NaN"));
    }
    let rho = free_energy(shape)?;
    if x < rho {
        return Ok((f64::INFINITY, 0.0));
    }
    if x - rho <= 4.0 * f64::EPSILON * rho.abs().max(1.0) {
        return Ok((0.0, 0.0));
    }
    if x == f64::INFINITY {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    // the slope Λ' grows at most like t·ξ, so (x−ρ)/t undershoots ξ*
    let guess = ((x - rho) / shape.t()).max(1e-3);
    let neg = |xi: f64| lyapunov_point(shape, xi, rho, None).map(|p| p.value - xi * x).unwrap_or(f64::INFINITY);
    let derivs = |xi: f64| {
        lyapunov_point(shape, xi, rho, None)
            .map(|p| (p.slope - x, p.curvature))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let m = minimize_unimodal("rate function", neg, guess, Interval::POSITIVE, Some(&derivs))?;
    let xi = solve_monotone("rate function slope", derivs, m.arg, Interval::POSITIVE, true).unwrap_or(m.arg);
    let v = -neg(xi);
    let (xi, v) = if v >= -m.value { (xi, v) } else { (m.arg, -m.value) };
    Ok((v.max(0.0), xi))
}

/// U_s^θ(x): x(θ − z) + s log(Γ(θ)/Γ(z)) with z = Ψ0⁻¹(−x/s) when
/// x > −sΨ0(θ), else 0; for s = 0 it is θx on x > 0.
pub fn stationary_rate_u(s: f64, theta: f64, x: f64) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::domain("stationary_rate_u", s, "s must be finite and >= 0"));
    }
    let theta = PositiveReal::new(theta)?.get();
    if x.is_nan() {
        return Err(Error::domain("stationary_rate_u", x, "must not be NaN"));
    }
    if s == 0.0 {
        return Ok(if x > 0.0 { theta * x } else { 0.0 });
    }
    if x <= -s * psi0(theta) {
        return Ok(0.0);
    }
    let z = inv_digamma(-x / s)?;
    Ok((x * (theta - z) + s * (lng(theta) - lng(z))).max(0.0))
}

/// R_t^θ(x) = ½((x + θt)/√t)² for x > −θt, else 0.
pub fn brownian_rate_r(t: f64, theta: f64, x: f64) -> Result<f64> {
    let t = PositiveReal::new(t)?.get();
    let theta = PositiveReal::new(theta)?.get();
    if x.is_nan() {
        return Err(Error::domain("brownian_rate_r", x, "must not be NaN"));
    }
    let z = x + theta * t;
    Ok(if z > 0.0 { 0.5 * z * z / t } else { 0.0 })
}

/// (U_s^θ)*(ξ) = s log(Γ(θ−ξ)/Γ(θ)) on 0 ≤ ξ < θ, +∞ otherwise.
pub fn dual_u_star(s: f64, theta: f64, xi: f64) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::domain("dual_u_star", s, "s must be finite and >= 0"));
    }
    let theta = PositiveReal::new(theta)?.get();
    if !(xi >= 0.0 && xi < theta) {
        return Ok(f64::INFINITY);
    }
    Ok(if s == 0.0 { 0.0 } else { s * (lng(theta - xi) - lng(theta)) })
}

/// (R_t^θ)*(ξ) = t(ξ²/2 − θξ) for ξ ≥ 0, +∞ otherwise.
pub fn dual_r_star(t: f64, theta: f64, xi: f64) -> Result<f64> {
    let t = PositiveReal::new(t)?.get();
    let theta = PositiveReal::new(theta)?.get();
    if !(xi >= 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(t * (0.5 * xi * xi - theta * xi))
}

/// J_GUE(r) = 4∫_0^r √(x(x+2)) dx in closed form.
pub fn j_gue(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::domain("j_gue", r, "must be >= 0"));
    }
    let q = (r * (r + 2.0)).sqrt();
    // ln(r+1+q) = asinh-type term; ln_1p keeps small r accurate
    Ok(2.0 * ((r + 1.0) * q - (r + q).ln_1p()))
}

/// The GUE comparison bound s·J_GUE(q/(2√(ts)) − 1) with
/// q = r − s log t − s + s log s, when q > 2√(ts); `None` otherwise.
pub fn gue_tail_bound(shape: Shape, r: f64) -> Result<Option<f64>> {
    let (s, t) = (shape.s(), shape.t());
    let q = r - s * t.ln() - s + s * s.ln();
    let w = 2.0 * (t * s).sqrt();
    if q > w {
        Ok(Some(s * j_gue(q / w - 1.0)?))
    } else {
        Ok(None)
    }
}

/// Numerical settings for the sampled G/H constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfConvSettings {
    /// Spacing of every x-type grid.
    pub step: f64,
    /// Nodes of the ξ-grid used to conjugate Λ.
    pub n_xi: usize,
    /// Points of each a-grid.
    pub a_points: usize,
    /// Endpoint exclusion near a = t (G side) and a = s (H side), as a
    /// fraction of t or s.
    pub margin: f64,
}

impl Default for InfConvSettings {
    fn default() -> Self {
        InfConvSettings {
            step: 0.005,
            n_xi: 4001,
            a_points: 200,
            margin: 1.0 / 50.0,
        }
    }
}

fn grid_with_step(lo: f64, hi: f64, step: f64) -> Result<GridSpec> {
    let n = ((hi - lo) / step).ceil() as usize + 1;
    GridSpec::new(lo, lo + (n - 1) as f64 * step, n.max(2))
}

/// ξ where Λ'_{s,t}(ξ) = y, for y > ρ(s,t).
fn slope_preimage(shape: Shape, rho: f64, y: f64) -> Result<f64> {
    let guess = ((y - rho) / shape.t()).max(1e-3);
    solve_monotone(
        "Lyapunov slope preimage",
        |xi| {
            let p = lyapunov_point(shape, xi, rho, None).expect("positive ξ");
            (p.slope - y, p.curvature)
        },
        guess,
        Interval::POSITIVE,
        true,
    )
}

/// The right-tail rate J_{s,t} on `grid`: 0 up to ρ(s,t), and above it the
/// discrete conjugate of Λ_{s,t} sampled on [0, Ξ] with `n_xi` nodes.
/// Ξ doubles from 1 until the maximizing ξ for the largest grid point is
/// below 0.9·Ξ.
pub fn right_tail_rate_sampled(shape: Shape, grid: GridSpec, n_xi: usize) -> Result<SampledFunction> {
    let rho = free_energy(shape)?;
    let mut big_xi = 1.0;
    if grid.max > rho {
        let xi_star = slope_preimage(shape, rho, grid.max)?;
        while xi_star >= 0.9 * big_xi {
            big_xi *= 2.0;
        }
    }
    let lam = lyapunov_sampled(shape, GridSpec::new(0.0, big_xi, n_xi)?)?;
    let mut j = legendre_transform(&lam, grid.min, grid.max, grid.n)?;
    // the constraint ξ ≥ 0 is genuine, not truncation: clear those flags
    let flags: Vec<bool> = j
        .boundary_flags()
        .iter()
        .zip(grid.nodes())
        .map(|(&f, y)| f && y > rho)
        .collect();
    let values: Vec<f64> = j.values().iter().map(|v| v.max(0.0)).collect();
    j = SampledFunction::new(grid, values)?;
    j.set_boundary_flags(flags);
    j.mark_convex();
    Ok(j)
}

fn span(xs: &[f64]) -> Result<(f64, f64)> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Precondition("need at least one finite x".into()));
    }
    Ok((lo, hi))
}

/// G_a(x) = R_{t−a}^θ □ J_{s,t−a}(x) at each x.
pub fn rate_g_curve(a: f64, shape: Shape, theta: f64, xs: &[f64], cfg: &InfConvSettings) -> Result<Vec<f64>> {
    let (s, t) = (shape.s(), shape.t());
    if !(a >= 0.0 && a < t) {
        return Err(Error::domain("rate_g", a, "needs 0 <= a < t"));
    }
    let theta = PositiveReal::new(theta)?.get();
    let tau = t - a;
    let sub = Shape::new(s, tau)?;
    let (x_lo, x_hi) = span(xs)?;
    let rho = free_energy(sub)?;
    // the optimal y lies between ρ and the point where R vanishes
    let ygrid = grid_with_step(rho - 1.0, x_hi + theta * tau + 1.0, cfg.step)?;
    let j = right_tail_rate_sampled(sub, ygrid, cfg.n_xi)?;
    let zgrid = grid_with_step(x_lo - ygrid.max - cfg.step, x_hi - ygrid.min + cfg.step, cfg.step)?;
    let r = SampledFunction::from_fn(zgrid, |z| brownian_rate_r(tau, theta, z).expect("valid"))?;
    xs.iter().map(|&x| Ok(inf_convolution_at(&r, &j, x)?.0)).collect()
}

pub fn rate_g(a: f64, shape: Shape, theta: f64, x: f64) -> Result<f64> {
    Ok(rate_g_curve(a, shape, theta, &[x], &InfConvSettings::default())?[0])
}

/// H_{u,v}(x) = (R_t^θ □ U_u^θ) □ J_{s−v,t}(x) at each x.
pub fn rate_h_curve(u: f64, v: f64, shape: Shape, theta: f64, xs: &[f64], cfg: &InfConvSettings) -> Result<Vec<f64>> {
    let (s, t) = (shape.s(), shape.t());
    if !(u >= 0.0 && u <= s) {
        return Err(Error::domain("rate_h", u, "needs 0 <= u <= s"));
    }
    if !(v >= 0.0 && v < s) {
        return Err(Error::domain("rate_h", v, "needs 0 <= v < s"));
    }
    let theta = PositiveReal::new(theta)?.get();
    let sub = Shape::new(s - v, t)?;
    let (x_lo, x_hi) = span(xs)?;
    let rho = free_energy(sub)?;
    // K = R □ U vanishes up to z0 and increases after it
    let z0 = -theta * t - u * psi0(theta);
    let ygrid = grid_with_step(rho - 1.0, x_hi - z0 + 0.5, cfg.step)?;
    let j = right_tail_rate_sampled(sub, ygrid, cfg.n_xi)?;
    let kgrid = grid_with_step((z0 - 0.5).max(x_lo - ygrid.max) - cfg.step, x_hi - ygrid.min + cfg.step, cfg.step)?;
    let wgrid = grid_with_step(-u * psi0(theta) - 0.5, kgrid.max + theta * t + 0.5, cfg.step)?;
    let ugrid = SampledFunction::from_fn(wgrid, |w| stationary_rate_u(u, theta, w).expect("valid"))?;
    let rgrid = grid_with_step(kgrid.min - wgrid.max - cfg.step, kgrid.max - wgrid.min + cfg.step, cfg.step)?;
    let r = SampledFunction::from_fn(rgrid, |z| brownian_rate_r(t, theta, z).expect("valid"))?;
    let k = inf_convolution(&r, &ugrid, kgrid)?;
    xs.iter().map(|&x| Ok(inf_convolution_at(&k, &j, x)?.0)).collect()
}

pub fn rate_h(u: f64, v: f64, shape: Shape, theta: f64, x: f64) -> Result<f64> {
    Ok(rate_h_curve(u, v, shape, theta, &[x], &InfConvSettings::default())?[0])
}

/// Right side of the variational identity, split into the G and H infima.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalSides {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub inf_g: Vec<f64>,
    pub inf_h: Vec<f64>,
    pub argmin_g: Vec<f64>,
    pub argmin_h: Vec<f64>,
}

fn a_grid(end: f64, cfg: &InfConvSettings) -> Vec<f64> {
    let hi = end * (1.0 - cfg.margin);
    (0..cfg.a_points)
        .map(|i| hi * i as f64 / (cfg.a_points - 1) as f64)
        .collect()
}

fn pointwise_min(rows: Vec<(f64, Vec<f64>)>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut best = vec![f64::INFINITY; n];
    let mut arg = vec![f64::NAN; n];
    for (a, row) in rows {
        for i in 0..n {
            if row[i] < best[i] {
                best[i] = row[i];
                arg[i] = a;
            }
        }
    }
    (best, arg)
}

/// Both sides of U_s^θ(x) = min{inf_a G_a(x), inf_a H_{a,a}(x)} on `xs`.
pub fn variational_sides(shape: Shape, theta: f64, xs: &[f64], cfg: &InfConvSettings) -> Result<VariationalSides> {
    if cfg.a_points < 2 {
        return Err(Error::InvalidGrid("need at least 2 a-points".into()));
    }
    let (s, t) = (shape.s(), shape.t());
    let g_rows = a_grid(t, cfg)
        .into_par_iter()
        .map(|a| rate_g_curve(a, shape, theta, xs, cfg).map(|r| (a, r)))
        .collect::<Result<Vec<_>>>()?;
    let h_rows = a_grid(s, cfg)
        .into_par_iter()
        .map(|a| rate_h_curve(a, a, shape, theta, xs, cfg).map(|r| (a, r)))
        .collect::<Result<Vec<_>>>()?;
    let (inf_g, argmin_g) = pointwise_min(g_rows, xs.len());
    let (inf_h, argmin_h) = pointwise_min(h_rows, xs.len());
    let u = xs
        .iter()
        .map(|&x| stationary_rate_u(s, theta, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(VariationalSides {
        x: xs.to_vec(),
        u,
        inf_g,
        inf_h,
        argmin_g,
        argmin_h,
    })
}

/// `count` points spaced 0.2 apart from one unit below the mean `−sΨ0(θ)`
/// of the stationary increment sum.
pub fn identity_points(shape: Shape, theta: f64, count: usize) -> Result<Vec<f64>> {
    let x0 = -shape.s() * crate::specfun::digamma(theta)?;
    Ok((0..count).map(|i| x0 - 1.0 + 0.2 * i as f64).collect())
}

/// Residual |U − min(inf G, inf H)| at each x, tolerance `tol`.
pub fn verify_variational_identity(
    shape: Shape,
    theta: f64,
    xs: &[f64],
    cfg: &InfConvSettings,
    tol: f64,
) -> Result<VerificationReport> {
    let sides = variational_sides(shape, theta, xs, cfg)?;
    let mut rep = VerificationReport::new("variational identity");
    rep.set("s", shape.s());
    rep.set("t", shape.t());
    rep.set("theta", theta);
    rep.set("step", cfg.step);
    rep.set("n_xi", cfg.n_xi as u64);
    rep.set("a_points", cfg.a_points as u64);
    rep.set("margin", cfg.margin);
    for i in 0..xs.len() {
        let rhs = sides.inf_g[i].min(sides.inf_h[i]);
        let res = (sides.u[i] - rhs).abs();
        let (side, a) = if sides.inf_g[i] <= sides.inf_h[i] {
            ("G", sides.argmin_g[i])
        } else {
            ("H", sides.argmin_h[i])
        };
        rep.push(
            Check::within(format!("x={:.6}", xs[i]), res, tol)
                .with_detail(format!("U={:.9} min={:.9} via {side} at a={a:.4}", sides.u[i], rhs)),
        );
    }
    Ok(rep)
}

/// A tabulated curve with a JSON provenance header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub header: Value,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curve {
    pub fn new(header: Value, columns: &[&str]) -> Self {
        Curve {
            header,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// `# {json header}` line, column names, then 17-digit rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n{}\n", self.header, self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_real(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// JSON object with the header, column names and rows; infinities are
    /// written as the string "inf".
    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<Value>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&v| if v.is_finite() { json!(v) } else { json!(fmt_real(v)) })
                    .collect()
            })
            .collect();
        serde_json::to_string_pretty(&json!({
            "header": self.header,
            "columns": self.columns,
            "rows": rows,
        }))
        .expect("curve serializes")
    }
}

/// Closed-form curves by name, for export.
pub fn tabulate(
    curve: &str,
    shape: Shape,
    theta: f64,
    grid: GridSpec,
) -> Result<Curve> {
    let header = json!({
        "curve": curve,
        "s": shape.s(),
        "t": shape.t(),
        "theta": theta,
        "grid": grid,
    });
    let mut out = Curve::new(header, &["parameter", "value"]);
    for p in grid.nodes() {
        let v = match curve {
            "lyapunov" => lyapunov(shape, p)?,
            "lyapunov-dual" => lyapunov_dual_form(shape, p)?,
            "rate" => rate_function(shape, p)?,
            "stationary-u" => stationary_rate_u(shape.s(), theta, p)?,
            "brownian-r" => brownian_rate_r(shape.t(), theta, p)?,
            "u-star" => dual_u_star(shape.s(), theta, p)?,
            "r-star" => dual_r_star(shape.t(), theta, p)?,
            "j-gue" => j_gue(p)?,
            other => return Err(Error::Precondition(format!("unknown curve {other:?}"))),
        };
        out.push(vec![p, v]);
    }
    Ok(out)
}
