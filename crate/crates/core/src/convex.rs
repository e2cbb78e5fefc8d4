//! Convex analysis on uniformly sampled functions.
//!
//! `+∞` is stored as `f64::INFINITY` and saturates under addition. The
//! finite values of a [`SampledFunction`] must occupy a contiguous block of
//! nodes, which is its effective domain.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `min, min + h, ..., max` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || !(min < max) {
            return Err(Error::InvalidGrid(format!("need finite min < max, got {min}:{max}")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {n}")));
        }
        Ok(GridSpec { min, max, n })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    /// Node `i`; the last node is exactly `max`.
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }
}

/// Parses `min:max:count`.
impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidGrid(format!("expected min:max:count, got {s:?}")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidGrid(format!("bad number {p:?} in {s:?}")))
        };
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidGrid(format!("bad count {:?} in {s:?}", parts[2])))?;
        GridSpec::new(num(parts[0])?, num(parts[1])?, count)
    }
}

/// A function sampled on a uniform grid, with `+∞` outside its domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampledRepr", into = "SampledRepr")]
pub struct SampledFunction {
    grid: GridSpec,
    values: Vec<f64>,
    boundary: Vec<bool>,
    convex: bool,
}

impl SampledFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::InvalidGrid(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.n
            )));
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
            return Err(Error::InvalidGrid(format!("value {v} not allowed")));
        }
        let finite: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_finite()).collect();
        if let (Some(&a), Some(&b)) = (finite.first(), finite.last()) {
            if b - a + 1 != finite.len() {
                return Err(Error::InvalidGrid("finite values are not contiguous".into()));
            }
        }
        let n = values.len();
        Ok(SampledFunction {
            grid,
            values,
            boundary: vec![false; n],
            convex: false,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: GridSpec, f: F) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    /// 0 at the node nearest `at`, `+∞` elsewhere.
    pub fn indicator(grid: GridSpec, at: f64) -> Result<Self> {
        let i = ((at - grid.min) / grid.step()).round();
        if !(0.0..grid.n as f64).contains(&i) {
            return Err(Error::InvalidGrid(format!("point {at} is off the grid")));
        }
        let mut v = vec![f64::INFINITY; grid.n];
        v[i as usize] = 0.0;
        let mut f = Self::new(grid, v)?;
        f.convex = true;
        Ok(f)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.grid.node(i)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-node flag: the optimizer behind this value sat on a grid end.
    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary_dominated(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub(crate) fn set_boundary_flags(&mut self, flags: Vec<bool>) {
        assert_eq!(flags.len(), self.values.len());
        self.boundary = flags;
    }

    pub(crate) fn mark_convex(&mut self) {
        self.convex = true;
    }

    pub fn marked_convex(&self) -> bool {
        self.convex
    }

    /// Index range of the finite values.
    pub fn effective_domain(&self) -> Option<(usize, usize)> {
        let a = self.values.iter().position(|v| v.is_finite())?;
        let b = self.values.iter().rposition(|v| v.is_finite())?;
        Some((a, b))
    }

    /// Discrete convexity: second differences of finite values are at
    /// least `-tol * scale`, scale being the largest finite magnitude.
    pub fn check_convex(&self, tol: f64) -> bool {
        let Some((a, b)) = self.effective_domain() else {
            return false;
        };
        let scale = self.values[a..=b].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        (a + 1..b).all(|i| self.values[i - 1] - 2.0 * self.values[i] + self.values[i + 1] >= -tol * scale)
    }

    /// Linear interpolation between nodes; `+∞` off the grid or when a
    /// neighbouring node is infinite (exact nodes return their value).
    pub fn eval(&self, x: f64) -> f64 {
        let h = self.grid.step();
        let pos = (x - self.grid.min) / h;
        let last = (self.grid.n - 1) as f64;
        if !(pos >= -1e-9 && pos <= last + 1e-9) {
            return f64::INFINITY;
        }
        let pos = pos.clamp(0.0, last);
        let i = (pos.floor() as usize).min(self.grid.n - 2);
        let w = pos - i as f64;
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        if w <= 1e-9 {
            return v0;
        }
        if w >= 1.0 - 1e-9 {
            return v1;
        }
        if v0.is_infinite() || v1.is_infinite() {
            return f64::INFINITY;
        }
        v0 + w * (v1 - v0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", fmt_real(self.x(i)), fmt_real(*v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') || line.starts_with("x,") {
                continue;
            }
            let (x, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad CSV row {line:?}")))?;
            xs.push(parse_real(x)?);
            vs.push(parse_real(v)?);
        }
        if xs.len() < 2 {
            return Err(Error::Format("CSV needs at least two rows".into()));
        }
        let grid = GridSpec::new(xs[0], xs[xs.len() - 1], xs.len())?;
        let tol = 1e-9 * grid.step().max(grid.max.abs().max(grid.min.abs()) * 1e-6);
        if xs.iter().enumerate().any(|(i, x)| (x - grid.node(i)).abs() > tol) {
            return Err(Error::Format("CSV abscissae are not uniform".into()));
        }
        Self::new(grid, vs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sampled function serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Formats with 17 significant digits; `inf` for `+∞`.
pub fn fmt_real(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_real(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|_| Error::Format(format!("bad number {t:?}"))),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtReal {
    Finite(f64),
    Tag(String),
}

#[derive(Serialize, Deserialize)]
struct SampledRepr {
    x_min: f64,
    x_max: f64,
    n_points: usize,
    values: Vec<ExtReal>,
    #[serde(default)]
    boundary_dominated: Vec<bool>,
    #[serde(default)]
    convex: bool,
}

impl From<SampledFunction> for SampledRepr {
    fn from(f: SampledFunction) -> Self {
        SampledRepr {
            x_min: f.grid.min,
            x_max: f.grid.max,
            n_points: f.grid.n,
            values: f
                .values
                .iter()
                .map(|&v| if v.is_finite() { ExtReal::Finite(v) } else { ExtReal::Tag(fmt_real(v)) })
                .collect(),
            boundary_dominated: f.boundary,
            convex: f.convex,
        }
    }
}

impl TryFrom<SampledRepr> for SampledFunction {
    type Error = Error;

    fn try_from(r: SampledRepr) -> Result<Self> {
        let grid = GridSpec::new(r.x_min, r.x_max, r.n_points)?;
        let values = r
            .values
            .into_iter()
            .map(|v| match v {
                ExtReal::Finite(x) => Ok(x),
                ExtReal::Tag(s) => parse_real(&s),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut f = SampledFunction::new(grid, values)?;
        if r.boundary_dominated.len() == f.len() {
            f.boundary = r.boundary_dominated;
        }
        f.convex = r.convex;
        Ok(f)
    }
}

/// Lower convex hull of the finite nodes, as node indices in increasing x.
fn lower_hull(f: &SampledFunction) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    let Some((a, b)) = f.effective_domain() else {
        return hull;
    };
    for i in a..=b {
        while hull.len() >= 2 {
            let (j, k) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let (xj, xk, xi) = (f.x(j), f.x(k), f.x(i));
            let (vj, vk, vi) = (f.values[j], f.values[k], f.values[i]);
            // drop k if it lies on or above the chord from j to i
            if (vk - vj) * (xi - xj) >= (vi - vj) * (xk - xj) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// `g(ξ) = max_i { x_i ξ − f(x_i) }` on the requested ξ-grid.
///
/// Runs in O(n + n_xi) by walking the lower convex hull of `f`. A value is
/// flagged boundary-dominated when its maximizer is the first or last node
/// of `f`'s grid, or when the maximizer was itself flagged.
pub fn legendre_transform(f: &SampledFunction, xi_min: f64, xi_max: f64, n_xi: usize) -> Result<SampledFunction> {
    let grid = GridSpec::new(xi_min, xi_max, n_xi)?;
    let hull = lower_hull(f);
    if hull.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let last = f.len() - 1;
    let mut values = Vec::with_capacity(n_xi);
    let mut boundary = Vec::with_capacity(n_xi);
    let mut k = 0;
    let score = |i: usize, xi: f64| f.x(i) * xi - f.values[i];
    for xi in grid.nodes() {
        // argmax moves right as ξ grows; ties go to the rightmost vertex
        while k + 1 < hull.len() && score(hull[k + 1], xi) >= score(hull[k], xi) {
            k += 1;
        }
        let i = hull[k];
        values.push(score(i, xi));
        boundary.push(i == 0 || i == last || f.boundary[i]);
    }
    Ok(SampledFunction {
        grid,
        values,
        boundary,
        convex: true,
    })
}

/// `(f*)*` evaluated back on `f`'s grid, with the intermediate conjugate
/// sampled on `[xi_min, xi_max]` with `n_xi` nodes.
pub fn biconjugate(f: &SampledFunction, xi_min: f64, xi_max: f64, n_xi: usize) -> Result<SampledFunction> {
    let conj = legendre_transform(f, xi_min, xi_max, n_xi)?;
    let g = f.grid;
    legendre_transform(&conj, g.min, g.max, g.n)
}

/// Value and argmin of `min_y { f(x − y) + g(y) }` over the finite nodes
/// `y` of `g`, interpolating `f` linearly.
pub fn inf_convolution_at(f: &SampledFunction, g: &SampledFunction, x: f64) -> Result<(f64, Option<usize>)> {
    let (a, b) = g.effective_domain().ok_or(Error::EmptyDomain)?;
    if f.effective_domain().is_none() {
        return Err(Error::EmptyDomain);
    }
    let mut best = f64::INFINITY;
    let mut arg = None;
    for j in a..=b {
        let v = f.eval(x - g.x(j)) + g.values[j];
        if v < best {
            best = v;
            arg = Some(j);
        }
    }
    Ok((best, arg))
}

/// `h(x) = min_y { f(x − y) + g(y) }` on `out`, with `y` ranging over the
/// finite nodes of `g` and `f` interpolated linearly between its nodes.
///
/// A value is flagged boundary-dominated when its minimizer `y` is an end
/// node of `g`'s grid while the objective still decreases toward it, when
/// `x − y` lands within one step of an end of `f`'s grid, or when either
/// input was flagged there.
pub fn inf_convolution(f: &SampledFunction, g: &SampledFunction, out: GridSpec) -> Result<SampledFunction> {
    let (fa, fb) = f.effective_domain().ok_or(Error::EmptyDomain)?;
    let (ga, gb) = g.effective_domain().ok_or(Error::EmptyDomain)?;
    let dom_lo = f.x(fa) + g.x(ga);
    let dom_hi = f.x(fb) + g.x(gb);
    if out.max < dom_lo || out.min > dom_hi {
        return Err(Error::IncompatibleWindow {
            lo: out.min,
            hi: out.max,
            dom_lo,
            dom_hi,
        });
    }
    let hf = f.grid.step();
    let (f_lo, f_hi) = (f.grid.min, f.grid.max);
    let glast = g.len() - 1;
    let mut values = Vec::with_capacity(out.n);
    let mut boundary = Vec::with_capacity(out.n);
    for x in out.nodes() {
        let (v, arg) = inf_convolution_at(f, g, x)?;
        let flag = match arg {
            None => false,
            Some(j) => {
                let z = x - g.x(j);
                let fpos = ((z - f_lo) / hf).round().clamp(0.0, (f.len() - 1) as f64) as usize;
                let edge_g = (j == 0 && g.len() > 1 && v < f.eval(x - g.x(1)) + g.values[1])
                    || (j == glast && v < f.eval(x - g.x(glast - 1)) + g.values[glast - 1]);
                let edge_f = z - f_lo < hf || f_hi - z < hf;
                edge_g || edge_f || g.boundary[j] || f.boundary[fpos]
            }
        };
        values.push(v);
        boundary.push(flag);
    }
    let mut h = SampledFunction::new(out, values)?;
    h.boundary = boundary;
    h.convex = f.convex && g.convex;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad(n: usize, lo: f64, hi: f64) -> SampledFunction {
        SampledFunction::from_fn(GridSpec::new(lo, hi, n).unwrap(), |x| 0.5 * x * x).unwrap()
    }

    #[test]
    fn self_dual_quadratic() {
        let g = legendre_transform(&quad(4001, -10.0, 10.0), -3.0, 3.0, 61).unwrap();
        for (i, xi) in g.grid().nodes().enumerate() {
            assert!((g.values()[i] - 0.5 * xi * xi).abs() < 1e-5, "xi={xi}");
            assert!(!g.is_boundary_dominated(i));
        }
    }

    #[test]
    fn indicator_conjugate_is_zero() {
        let f = SampledFunction::indicator(GridSpec::new(-2.0, 2.0, 401).unwrap(), 0.0).unwrap();
        let g = legendre_transform(&f, -5.0, 5.0, 11).unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn narrow_window_flags_boundary() {
        let g = legendre_transform(&quad(201, -1.0, 1.0), 0.0, 3.0, 31).unwrap();
        assert!(!g.is_boundary_dominated(5));
        assert!(g.is_boundary_dominated(30));
    }

    #[test]
    fn empty_domain_rejected() {
        let f = SampledFunction::new(GridSpec::new(0.0, 1.0, 3).unwrap(), vec![f64::INFINITY; 3]).unwrap();
        assert_eq!(legendre_transform(&f, 0.0, 1.0, 3), Err(Error::EmptyDomain));
    }

    #[test]
    fn non_contiguous_domain_rejected() {
        let r = SampledFunction::new(GridSpec::new(0.0, 1.0, 3).unwrap(), vec![0.0, f64::INFINITY, 0.0]);
        assert!(r.is_err());
    }

    #[test]
    fn quadratic_inf_convolution() {
        let f = quad(2001, -10.0, 10.0);
        let h = inf_convolution(&f, &f, GridSpec::new(-2.0, 2.0, 5).unwrap()).unwrap();
        assert!((h.values()[4] - 1.0).abs() < 1e-5);
        assert!((h.values()[2]).abs() < 1e-12);
    }

    #[test]
    fn indicator_is_identity_for_inf_convolution() {
        let grid = GridSpec::new(-3.0, 3.0, 601).unwrap();
        let f = SampledFunction::from_fn(grid, |x| (x - 0.3).abs() + x * x).unwrap();
        let e = SampledFunction::indicator(grid, 0.0).unwrap();
        let h = inf_convolution(&f, &e, grid).unwrap();
        for i in 0..grid.n {
            assert!((h.values()[i] - f.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn window_missing_domain() {
        let f = quad(11, 0.0, 1.0);
        let r = inf_convolution(&f, &f, GridSpec::new(5.0, 6.0, 3).unwrap());
        assert!(matches!(r, Err(Error::IncompatibleWindow { .. })));
    }

    #[test]
    fn abs_is_its_own_biconjugate() {
        let f = SampledFunction::from_fn(GridSpec::new(-5.0, 5.0, 1001).unwrap(), f64::abs).unwrap();
        let b = biconjugate(&f, -1.0, 1.0, 201).unwrap();
        for i in 0..f.len() {
            assert!((b.values()[i] - f.values()[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn biconjugate_is_convex_hull() {
        let grid = GridSpec::new(-3.0, 5.0, 801).unwrap();
        let f = SampledFunction::from_fn(grid, |x| (x * x).min((x - 2.0) * (x - 2.0) + 1.0)).unwrap();
        let b = biconjugate(&f, -12.0, 12.0, 2401).unwrap();
        // oracle: upper envelope of tangent lines of both parabolas at every grid slope
        let hull_at = |x: f64| {
            let mut best = f64::NEG_INFINITY;
            for k in 0..=24000 {
                let m = -12.0 + k as f64 * 1e-3;
                // support of f* at slope m is max over the two pieces
                let c1 = m * m / 4.0;
                let c2 = m * m / 4.0 + 2.0 * m - 1.0;
                let conj = c1.max(c2);
                best = best.max(m * x - conj);
            }
            best
        };
        let i = grid.nodes().position(|x| (x - 1.0).abs() < 1e-12).unwrap();
        // the common tangent touches at x = 0.25 and 2.25 with slope 0.5
        let chord = 0.25f64.powi(2) + 0.5 * (1.0 - 0.25);
        assert!((b.values()[i] - chord).abs() < 1e-5);
        assert!((hull_at(1.0) - chord).abs() < 1e-5);
        for &x in &[-2.0, 0.0, 1.5, 3.0, 4.0] {
            let j = ((x + 3.0) / grid.step()).round() as usize;
            assert!((b.values()[j] - hull_at(x)).abs() < 1e-4, "x={x}");
        }
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let grid = GridSpec::new(-1.0, 1.0, 5).unwrap();
        let f = SampledFunction::new(grid, vec![f64::INFINITY, 0.25, 0.0, 0.25, f64::INFINITY]).unwrap();
        let csv = f.to_csv();
        assert!(csv.contains("inf"));
        let back = SampledFunction::from_csv(&csv).unwrap();
        assert_eq!(back.values(), f.values());
        let json = f.to_json();
        let back = SampledFunction::from_json(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "0:3:301".parse().unwrap();
        assert_eq!(g.n, 301);
        assert!((g.node(100) - 1.0).abs() < 1e-15);
        assert!("3:0:10".parse::<GridSpec>().is_err());
        assert!("0:1:1".parse::<GridSpec>().is_err());
        assert!("0:1".parse::<GridSpec>().is_err());
    }

    proptest! {
        #[test]
        fn order_reversal(a in 0.1f64..3.0, c in 0.0f64..2.0, shift in -1.0f64..1.0) {
            let grid = GridSpec::new(-4.0, 4.0, 161).unwrap();
            let f = SampledFunction::from_fn(grid, |x| a * (x - shift).powi(2)).unwrap();
            let g = SampledFunction::from_fn(grid, |x| a * (x - shift).powi(2) + c + 0.1 * x.abs()).unwrap();
            let fs = legendre_transform(&f, -3.0, 3.0, 61).unwrap();
            let gs = legendre_transform(&g, -3.0, 3.0, 61).unwrap();
            for i in 0..61 {
                prop_assert!(fs.values()[i] >= gs.values()[i] - 1e-12);
            }
        }

        #[test]
        fn fenchel_young(a in 0.1f64..3.0, b in -2.0f64..2.0, p in 1.0f64..4.0) {
            let grid = GridSpec::new(-3.0, 3.0, 121).unwrap();
            let f = SampledFunction::from_fn(grid, |x| a * x.abs().powf(p) + b * x).unwrap();
            let fs = legendre_transform(&f, -5.0, 5.0, 101).unwrap();
            let scale = f.values().iter().chain(fs.values()).fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..f.len() {
                for j in 0..fs.len() {
                    let (x, xi) = (f.x(i), fs.x(j));
                    prop_assert!(f.values()[i] + fs.values()[j] >= x * xi - 1e-9 * scale);
                }
            }
        }

        #[test]
        fn conjugate_is_convex(a in 0.1f64..3.0, k in 0.0f64..2.0) {
            let grid = GridSpec::new(-3.0, 3.0, 301).unwrap();
            let f = SampledFunction::from_fn(grid, |x| a * x.sin() + k * x * x).unwrap();
            let fs = legendre_transform(&f, -4.0, 4.0, 201).unwrap();
            prop_assert!(fs.check_convex(1e-9));
        }
    }
}
