//! Discretized Brownian environments and grid evaluation of polymer
//! partition functions, the stationary model, Brownian last passage and
//! GUE top eigenvalues.
//!
//! Times live on the uniform grid `−T, −T+δ, ..., horizon`; every line is a
//! two-sided Brownian motion pinned at `B(0) = 0`. Nested integrals use the
//! cumulative trapezoid rule, shifted by the per-line maximum so that sums
//! stay in range.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{Check, VerificationReport};

const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"OYEV";
/// Stream ids above any line's pair `2·line, 2·line + 1`.
const BOUNDARY_STREAM: u64 = u64::MAX - 1;
const REFINE_STREAM_BASE: u64 = 1 << 62;

/// Tolerance, in units of the step, for a time to count as a grid node.
const NODE_TOL: f64 = 1e-6;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 key for `(seed, replicate)`: both words verbatim plus a
/// SplitMix64 digest of the pair, so distinct pairs never share a key.
fn stream_key(seed: u64, replicate: u64) -> [u8; 32] {
    let mut st = seed ^ replicate.rotate_left(32);
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(&splitmix64(&mut st).to_le_bytes());
    key[24..].copy_from_slice(&splitmix64(&mut st).to_le_bytes());
    key
}

/// Generator for one `(seed, replicate, stream)` triple.
pub fn stream_rng(seed: u64, replicate: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(stream_key(seed, replicate));
    rng.set_stream(stream);
    rng
}

/// Geometry of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_lines: usize,
    pub horizon: f64,
    pub step: f64,
    /// Length of the negative-time segment, rounded up to whole steps.
    pub trunc_t: f64,
    /// Whether to include the boundary Brownian motion of the stationary model.
    pub boundary: bool,
}

impl EnvSpec {
    pub fn new(n_lines: usize, horizon: f64, step: f64, trunc_t: f64, boundary: bool) -> Result<Self> {
        if n_lines == 0 {
            return Err(Error::InvalidDimension("need at least one line".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) || !(step > 0.0) || step > horizon / 4.0 + 1e-15 {
            return Err(Error::InvalidDimension(format!(
                "need horizon > 0 and 0 < step <= horizon/4, got horizon {horizon}, step {step}"
            )));
        }
        let k = horizon / step;
        if (k - k.round()).abs() > NODE_TOL * k.max(1.0) {
            return Err(Error::InvalidDimension(format!(
                "horizon {horizon} is not a multiple of step {step}"
            )));
        }
        if !(trunc_t >= 0.0 && trunc_t.is_finite()) {
            return Err(Error::InvalidDimension(format!("truncation {trunc_t} must be >= 0")));
        }
        Ok(EnvSpec {
            n_lines,
            horizon,
            step,
            trunc_t,
            boundary,
        })
    }

    fn n_pos(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    fn n_neg(&self) -> usize {
        ((self.trunc_t / self.step) - NODE_TOL).ceil().max(0.0) as usize
    }
}

/// A sampled environment: per-line Gaussian increments with variance δ on
/// `[−T, horizon]`, plus an optional boundary line.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvGrid {
    n_lines: usize,
    step: f64,
    n_neg: usize,
    n_pos: usize,
    seed: u64,
    replicate: u64,
    /// Row-major `[line][interval]`, interval `i` spanning nodes `i, i+1`.
    increments: Vec<f64>,
    boundary_increments: Option<Vec<f64>>,
    positions: Vec<f64>,
    boundary_positions: Option<Vec<f64>>,
}

/// Replay metadata for a serialized environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvManifest {
    pub format_version: u32,
    pub seed: u64,
    pub replicate: u64,
    pub n_lines: usize,
    pub horizon: f64,
    pub step: f64,
    pub trunc_t: f64,
    pub intervals_per_line: usize,
    pub negative_intervals: usize,
    pub has_boundary: bool,
    pub rng: String,
    pub payload: String,
}

fn fill_line(rng_fwd: &mut ChaCha8Rng, rng_bwd: &mut ChaCha8Rng, n_neg: usize, n_pos: usize, sd: f64, out: &mut [f64]) {
    for slot in out[n_neg..n_neg + n_pos].iter_mut() {
        let z: f64 = rng_fwd.sample(StandardNormal);
        *slot = sd * z;
    }
    // the backward stream walks away from time 0
    for k in 0..n_neg {
        let z: f64 = rng_bwd.sample(StandardNormal);
        out[n_neg - 1 - k] = sd * z;
    }
}

fn positions_from(increments: &[f64], n_neg: usize) -> Vec<f64> {
    let m = increments.len();
    let mut pos = vec![0.0; m + 1];
    for i in n_neg..m {
        pos[i + 1] = pos[i] + increments[i];
    }
    for i in (0..n_neg).rev() {
        pos[i] = pos[i + 1] - increments[i];
    }
    pos
}

impl EnvGrid {
    /// Samples every line from its own `(seed, replicate, stream)` generator:
    /// line `l` uses stream `2l` forward in time and `2l + 1` backward, so
    /// neither adding lines nor lengthening either time segment disturbs
    /// existing draws.
    pub fn sample(spec: EnvSpec, seed: u64, replicate: u64) -> Result<Self> {
        let (n_neg, n_pos) = (spec.n_neg(), spec.n_pos());
        let m = n_neg + n_pos;
        let sd = spec.step.sqrt();
        let mut increments = vec![0.0; spec.n_lines * m];
        for (line, row) in increments.chunks_mut(m).enumerate() {
            let l = line as u64;
            let mut fwd = stream_rng(seed, replicate, 2 * l);
            let mut bwd = stream_rng(seed, replicate, 2 * l + 1);
            fill_line(&mut fwd, &mut bwd, n_neg, n_pos, sd, row);
        }
        let boundary = spec.boundary.then(|| {
            let mut b = vec![0.0; m];
            let mut fwd = stream_rng(seed, replicate, BOUNDARY_STREAM);
            let mut bwd = stream_rng(seed, replicate, BOUNDARY_STREAM + 1);
            fill_line(&mut fwd, &mut bwd, n_neg, n_pos, sd, &mut b);
            b
        });
        Self::assemble(spec, seed, replicate, increments, boundary)
    }

    /// The deterministic environment with all increments 0.
    pub fn zeros(spec: EnvSpec) -> Result<Self> {
        let m = spec.n_neg() + spec.n_pos();
        let boundary = spec.boundary.then(|| vec![0.0; m]);
        Self::assemble(spec, 0, 0, vec![0.0; spec.n_lines * m], boundary)
    }

    /// Deterministic lines `B_l(t) = drifts[l]·t`, boundary `boundary_drift·t`.
    pub fn linear_drift(spec: EnvSpec, drifts: &[f64], boundary_drift: f64) -> Result<Self> {
        if drifts.len() != spec.n_lines {
            return Err(Error::InvalidDimension(format!(
                "{} drifts for {} lines",
                drifts.len(),
                spec.n_lines
            )));
        }
        let m = spec.n_neg() + spec.n_pos();
        let increments = drifts.iter().flat_map(|&c| std::iter::repeat(c * spec.step).take(m)).collect();
        let boundary = spec.boundary.then(|| vec![boundary_drift * spec.step; m]);
        Self::assemble(spec, 0, 0, increments, boundary)
    }

    fn assemble(
        spec: EnvSpec,
        seed: u64,
        replicate: u64,
        increments: Vec<f64>,
        boundary: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (n_neg, n_pos) = (spec.n_neg(), spec.n_pos());
        let m = n_neg + n_pos;
        if increments.len() != spec.n_lines * m || boundary.as_ref().is_some_and(|b| b.len() != m) {
            return Err(Error::InvalidDimension("increment count does not match the grid".into()));
        }
        if increments.iter().chain(boundary.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimension("non-finite increment".into()));
        }
        let positions = increments.chunks(m).flat_map(|row| positions_from(row, n_neg)).collect();
        let boundary_positions = boundary.as_ref().map(|b| positions_from(b, n_neg));
        Ok(EnvGrid {
            n_lines: spec.n_lines,
            step: spec.step,
            n_neg,
            n_pos,
            seed,
            replicate,
            increments,
            boundary_increments: boundary,
            positions,
            boundary_positions,
        })
    }

    /// Halves the step by inserting Brownian-bridge midpoints, drawn from
    /// streams reserved for refinement; coarse nodes keep their values.
    pub fn refine(&self) -> Result<Self> {
        let m = self.intervals();
        let sd = (self.step / 4.0).sqrt();
        let level = (self.seed, self.replicate);
        let split = |row: &[f64], stream: u64| {
            let mut rng = stream_rng(level.0, level.1, stream);
            let mut out = Vec::with_capacity(2 * row.len());
            for &d in row {
                let z: f64 = rng.sample(StandardNormal);
                out.push(0.5 * d + sd * z);
                out.push(0.5 * d - sd * z);
            }
            out
        };
        // the refinement streams are keyed by the current step so that
        // repeated refinement uses fresh draws at every level
        let salt = (self.step.to_bits() >> 20) & 0xFFFF_FFFF;
        let increments = self
            .increments
            .chunks(m)
            .enumerate()
            .flat_map(|(l, row)| split(row, REFINE_STREAM_BASE + (salt << 20) + l as u64))
            .collect();
        let boundary = self
            .boundary_increments
            .as_ref()
            .map(|b| split(b, REFINE_STREAM_BASE + (salt << 20) + (1 << 19)));
        let spec = EnvSpec::new(self.n_lines, self.horizon(), self.step / 2.0, self.trunc_t(), boundary.is_some())?;
        Self::assemble(spec, self.seed, self.replicate, increments, boundary)
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.n_pos as f64 * self.step
    }

    pub fn trunc_t(&self) -> f64 {
        self.n_neg as f64 * self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }

    pub fn has_boundary(&self) -> bool {
        self.boundary_increments.is_some()
    }

    /// Number of time intervals per line, negative segment included.
    pub fn intervals(&self) -> usize {
        self.n_neg + self.n_pos
    }

    /// Index of the node at time 0.
    pub fn origin(&self) -> usize {
        self.n_neg
    }

    pub fn time(&self, node: usize) -> f64 {
        (node as f64 - self.n_neg as f64) * self.step
    }

    /// Node index of time `t`, which must sit on the grid.
    pub fn node(&self, t: f64) -> Result<usize> {
        let k = t / self.step;
        let r = k.round();
        if (k - r).abs() > NODE_TOL || !t.is_finite() {
            return Err(Error::OffGrid { time: t, step: self.step });
        }
        let idx = r + self.n_neg as f64;
        if idx < 0.0 || idx > self.intervals() as f64 {
            return Err(Error::IndexRange(format!(
                "time {t} outside [{}, {}]",
                -self.trunc_t(),
                self.horizon()
            )));
        }
        Ok(idx as usize)
    }

    fn check_line(&self, line: usize) -> Result<()> {
        if line >= self.n_lines {
            return Err(Error::IndexRange(format!("line {line} with {} lines", self.n_lines)));
        }
        Ok(())
    }

    pub fn line_increments(&self, line: usize) -> &[f64] {
        let m = self.intervals();
        &self.increments[line * m..(line + 1) * m]
    }

    /// `B_line` at every node.
    pub fn line_positions(&self, line: usize) -> &[f64] {
        let m = self.intervals() + 1;
        &self.positions[line * m..(line + 1) * m]
    }

    pub fn boundary_increments(&self) -> Option<&[f64]> {
        self.boundary_increments.as_deref()
    }

    pub fn boundary_positions(&self) -> Option<&[f64]> {
        self.boundary_positions.as_deref()
    }

    /// `B_line(u, t) = B_line(t) − B_line(u)` summed from the increments.
    pub fn increment(&self, line: usize, u: f64, t: f64) -> Result<f64> {
        self.check_line(line)?;
        let (a, b) = (self.node(u)?, self.node(t)?);
        let row = self.line_increments(line);
        Ok(if a <= b {
            row[a..b].iter().sum()
        } else {
            -row[b..a].iter().sum::<f64>()
        })
    }

    pub fn manifest(&self) -> EnvManifest {
        EnvManifest {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            replicate: self.replicate,
            n_lines: self.n_lines,
            horizon: self.horizon(),
            step: self.step,
            trunc_t: self.trunc_t(),
            intervals_per_line: self.intervals(),
            negative_intervals: self.n_neg,
            has_boundary: self.has_boundary(),
            rng: "chacha8, key = seed|replicate|splitmix64, stream 2*line (+1 backward in time)".into(),
            payload: "increments row-major f64 little-endian, then boundary row".into(),
        }
    }

    /// Binary container: magic, version, seed, replicate, line count,
    /// negative and positive interval counts, δ, T, boundary flag, then
    /// the increments as little-endian f64 rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let rows = self.n_lines + usize::from(self.has_boundary());
        let mut out = Vec::with_capacity(64 + 8 * rows * self.intervals());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.replicate.to_le_bytes());
        out.extend_from_slice(&(self.n_lines as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_neg as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_pos as u64).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.trunc_t().to_le_bytes());
        out.extend_from_slice(&u64::from(self.has_boundary()).to_le_bytes());
        for v in self.increments.iter().chain(self.boundary_increments.iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("environment container: {m}"));
        if bytes.len() < 72 || &bytes[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != FORMAT_VERSION {
            return Err(bad("unsupported version"));
        }
        let (seed, replicate) = (u64_at(8), u64_at(16));
        let n_lines = u64_at(24) as usize;
        let (n_neg, n_pos) = (u64_at(32) as usize, u64_at(40) as usize);
        let step = f64_at(48);
        let has_boundary = u64_at(64) != 0;
        let m = n_neg + n_pos;
        let rows = n_lines + usize::from(has_boundary);
        let payload = &bytes[72..];
        if payload.len() != 8 * rows * m {
            return Err(bad("payload length does not match the header"));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (inc, bnd) = vals.split_at(n_lines * m);
        let spec = EnvSpec::new(n_lines, n_pos as f64 * step, step, n_neg as f64 * step, has_boundary)?;
        if spec.n_neg() != n_neg || spec.n_pos() != n_pos {
            return Err(bad("inconsistent grid"));
        }
        Self::assemble(spec, seed, replicate, inc.to_vec(), has_boundary.then(|| bnd.to_vec()))
    }
}

/// `sample_environment(n_lines, horizon, step, trunc_T, seed)`: replicate 0,
/// with a boundary line whenever `trunc_T > 0`.
pub fn sample_environment(n_lines: usize, horizon: f64, step: f64, trunc_t: f64, seed: u64) -> Result<EnvGrid> {
    EnvGrid::sample(EnvSpec::new(n_lines, horizon, step, trunc_t, trunc_t > 0.0)?, seed, 0)
}

/// A natural-log weight.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogWeight(pub f64);

impl LogWeight {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `log ∫_{t_0}^{t_i} e^{g}` for each node `i` of `g`, by the trapezoid rule.
/// The first entry is `−∞` (empty integral).
fn log_cumulative_trapezoid(g: &[f64], step: f64, out: &mut Vec<f64>) {
    out.clear();
    let shift = g.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        out.resize(g.len(), f64::NEG_INFINITY);
        return;
    }
    let half = 0.5 * step;
    let mut prev = (g[0] - shift).exp();
    let mut cum = 0.0;
    out.push(f64::NEG_INFINITY);
    for &v in &g[1..] {
        let e = (v - shift).exp();
        cum += half * (prev + e);
        prev = e;
        out.push(if cum > 0.0 { shift + cum.ln() } else { f64::NEG_INFINITY });
    }
}

/// Forward sweep over lines `first..=last` from `start_log`, the log weight
/// on line `first` at each node from `i0` on:
/// `L_k(v) = B_k(v) + log ∫_{t_{i0}}^{v} e^{L_{k−1}(w) − B_k(w)} dw`.
fn forward_sweep(env: &EnvGrid, first: usize, last: usize, i0: usize, i1: usize, start_log: Vec<f64>) -> Vec<f64> {
    let mut cur = start_log;
    let mut g = Vec::with_capacity(cur.len());
    let mut cum = Vec::with_capacity(cur.len());
    for k in first + 1..=last {
        let b = &env.line_positions(k)[i0..=i1];
        g.clear();
        g.extend(cur.iter().zip(b).map(|(l, bk)| l - bk));
        log_cumulative_trapezoid(&g, env.step, &mut cum);
        for (c, (out, bk)) in cum.iter().zip(cur.iter_mut().zip(b)) {
            *out = bk + c;
        }
    }
    cur
}

/// `log Z_{j,n}(u, v)` for every node `v` from `u` to `t`.
pub fn log_partition_curve(env: &EnvGrid, j: usize, n: usize, u: f64, t: f64) -> Result<Vec<f64>> {
    if j > n {
        return Err(Error::IndexRange(format!("need j <= n, got j = {j}, n = {n}")));
    }
    env.check_line(n)?;
    let (i0, i1) = (env.node(u)?, env.node(t)?);
    if i0 >= i1 {
        return Err(Error::Precondition(format!("need u < t, got u = {u}, t = {t}")));
    }
    let bj = &env.line_positions(j)[i0..=i1];
    let start: Vec<f64> = bj.iter().map(|b| b - bj[0]).collect();
    Ok(forward_sweep(env, j, n, i0, i1, start))
}

/// `log Z_{j,n}(u, t)` on the grid. For `j = n` this is exactly the summed
/// increments of line `j` over `[u, t]`.
pub fn log_partition(env: &EnvGrid, j: usize, n: usize, u: f64, t: f64) -> Result<LogWeight> {
    if j == n {
        return Ok(LogWeight(env.increment(j, u, t)?));
    }
    let curve = log_partition_curve(env, j, n, u, t)?;
    Ok(LogWeight(*curve.last().expect("non-empty")))
}

/// Increment variables of the stationary model at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryR {
    pub theta: f64,
    pub at_time: f64,
    /// `r_1, ..., r_{k_max}` at `at_time`.
    pub r: Vec<f64>,
    /// Estimated share of each defining integral lost to truncation.
    pub remainder: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Remainder share above which a truncation warning is raised.
pub const TRUNCATION_WARN: f64 = 1e-8;

pub fn default_trunc_t(theta: f64) -> f64 {
    (30.0 / theta).max(10.0)
}

fn boundary_positions(env: &EnvGrid) -> Result<&[f64]> {
    env.boundary_positions()
        .ok_or_else(|| Error::Precondition("environment has no boundary line".into()))
}

/// Full paths `r_k(t')` for `k = 1..=k_max` and all nodes `t'`, plus the
/// remainder estimates at node `at`.
fn stationary_paths(env: &EnvGrid, theta: f64, k_max: usize, at: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::domain("stationary model", theta, "theta must be > 0"));
    }
    if env.trunc_t() <= 0.0 {
        return Err(Error::Precondition("stationary model needs trunc_T > 0".into()));
    }
    env.check_line(k_max)?;
    let b = boundary_positions(env)?;
    let m = env.intervals() + 1;
    let times: Vec<f64> = (0..m).map(|i| env.time(i)).collect();
    let origin = env.origin();
    let mut y: Vec<f64> = b.to_vec();
    let mut paths = Vec::with_capacity(k_max);
    let mut remainder = Vec::with_capacity(k_max);
    let mut a = vec![0.0; m];
    let mut cum = Vec::with_capacity(m);
    for k in 1..=k_max {
        let bk = env.line_positions(k);
        for i in 0..m {
            a[i] = -y[i] + theta * times[i] - bk[i];
        }
        log_cumulative_trapezoid(&a, env.step, &mut cum);
        let r: Vec<f64> = (0..m)
            .map(|i| {
                if cum[i] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    y[i] - theta * times[i] + bk[i] + cum[i]
                }
            })
            .collect();
        // the integrand decays like e^{θv} below −T: tail ≈ first finite value / θ
        let first = a.iter().cloned().find(|v| v.is_finite()).unwrap_or(f64::NEG_INFINITY);
        remainder.push(((first - cum[at]).exp() / theta).min(1.0));
        let r0 = r[origin];
        for i in 0..m {
            y[i] = if r[i] == f64::NEG_INFINITY { f64::INFINITY } else { y[i] + r0 - r[i] };
        }
        paths.push(r);
    }
    Ok((paths, remainder))
}

/// `r_1^θ, ..., r_{k_max}^θ` at `at_time`, lines `1..=k_max`, boundary `B`.
pub fn stationary_r_sequence(env: &EnvGrid, theta: f64, k_max: usize, at_time: f64) -> Result<StationaryR> {
    let at = env.node(at_time)?;
    if k_max == 0 {
        return Err(Error::Precondition("need k_max >= 1".into()));
    }
    let (paths, remainder) = stationary_paths(env, theta, k_max, at)?;
    let warnings = remainder
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > TRUNCATION_WARN)
        .map(|(k, q)| format!("truncation remainder {q:.3e} for r_{} exceeds {TRUNCATION_WARN:e}", k + 1))
        .collect();
    Ok(StationaryR {
        theta,
        at_time,
        r: paths.iter().map(|p| p[at]).collect(),
        remainder,
        warnings,
    })
}

/// `log Z_k^θ(v)` for `k = 0..=n` at every node, started from `e^{θv − B(v)}`.
fn stationary_log_z_all(env: &EnvGrid, theta: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    if n > 0 {
        env.check_line(n)?;
    }
    let b = boundary_positions(env)?;
    let m = env.intervals() + 1;
    let mut out = Vec::with_capacity(n + 1);
    let z0: Vec<f64> = (0..m).map(|i| theta * env.time(i) - b[i]).collect();
    out.push(z0);
    let mut g = Vec::with_capacity(m);
    let mut cum = Vec::with_capacity(m);
    for k in 1..=n {
        let bk = env.line_positions(k);
        let prev = &out[k - 1];
        g.clear();
        g.extend(prev.iter().zip(bk).map(|(l, x)| l - x));
        log_cumulative_trapezoid(&g, env.step, &mut cum);
        out.push(cum.iter().zip(bk).map(|(c, x)| c + x).collect());
    }
    Ok(out)
}

/// `log Z_n^θ(t)` on the grid.
pub fn stationary_log_z(env: &EnvGrid, theta: f64, n: usize, t: f64) -> Result<f64> {
    let i = env.node(t)?;
    Ok(stationary_log_z_all(env, theta, n)?[n][i])
}

/// `log Z_{1,n}(u, t)` for every node `u` in `[0, t]`, by a backward sweep.
fn log_partition_from_all_starts(env: &EnvGrid, n: usize, i0: usize, i1: usize) -> Vec<f64> {
    let len = i1 - i0 + 1;
    // H_k(w) = log Z_{k,n}(w, t); H_n(w) = B_n(t) − B_n(w)
    let bn = &env.line_positions(n)[i0..=i1];
    let mut cur: Vec<f64> = bn.iter().map(|b| bn[len - 1] - b).collect();
    let mut g = vec![0.0; len];
    let mut cum = Vec::with_capacity(len);
    for k in (1..n).rev() {
        let bk = &env.line_positions(k)[i0..=i1];
        // H_k(w) = −B_k(w) + log ∫_w^t e^{B_k(v) + H_{k+1}(v)} dv, integrated from the right
        for i in 0..len {
            g[len - 1 - i] = bk[i] + cur[i];
        }
        log_cumulative_trapezoid(&g, env.step, &mut cum);
        for i in 0..len {
            cur[i] = -bk[i] + cum[len - 1 - i];
        }
    }
    cur
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Right side of the decomposition of `Z_n^θ(t)` by where paths leave the
/// boundary: `∫_0^t Z_0^θ(u) Z_{1,n}(u,t) du + Σ_j Z_j^θ(0) Z_{j,n}(0,t)`,
/// returned together with `log Z_n^θ(t)` computed directly.
pub fn coupling_sides(env: &EnvGrid, theta: f64, n: usize, t: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Precondition("coupling needs n >= 1".into()));
    }
    let (i0, i1) = (env.origin(), env.node(t)?);
    if i1 <= i0 {
        return Err(Error::Precondition("coupling needs t > 0".into()));
    }
    let z = stationary_log_z_all(env, theta, n)?;
    let direct = z[n][i1];
    let from_starts = log_partition_from_all_starts(env, n, i0, i1);
    let integrand: Vec<f64> = (i0..=i1).map(|i| z[0][i] + from_starts[i - i0]).collect();
    let mut cum = Vec::new();
    log_cumulative_trapezoid(&integrand, env.step, &mut cum);
    let mut terms = vec![*cum.last().expect("non-empty")];
    for j in 1..=n {
        terms.push(z[j][i0] + log_partition(env, j, n, 0.0, t)?.value());
    }
    Ok((direct, log_sum_exp(&terms)))
}

/// Checks `Σ_{k≤n} r_k(t) = B(t) − θt + log Z_n^θ(t)` on the grid (absolute
/// residual, tolerance 1e-6) and reports the relative residual of the
/// boundary-exit decomposition of `Z_n^θ(t)` (tolerance 1e-3).
pub fn verify_stationary_decomposition(env: &EnvGrid, theta: f64, n: usize, t: f64) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("stationary decomposition");
    rep.set("seed", env.seed());
    rep.set("replicate", env.replicate());
    rep.set("step", env.step());
    rep.set("trunc_T", env.trunc_t());
    rep.set("theta", theta);
    rep.set("n", n as u64);
    rep.set("t", t);
    let seq = stationary_r_sequence(env, theta, n.max(1), t)?;
    for w in &seq.warnings {
        rep.warn(w.clone());
    }
    let i = env.node(t)?;
    let b = boundary_positions(env)?[i];
    let lhs: f64 = seq.r[..n].iter().sum();
    let rhs = b - theta * t + stationary_log_z(env, theta, n, t)?;
    rep.push(Check::within("sum of r_k", (lhs - rhs).abs(), 1e-6));
    let z0 = stationary_log_z(env, theta, 0, t)?;
    rep.push(Check::within("Z_0 boundary weight", (z0 - (theta * t - b)).abs(), 1e-12));
    if n >= 1 && t > 0.0 {
        let (direct, split) = coupling_sides(env, theta, n, t)?;
        rep.push(Check::within("boundary-exit decomposition", (split - direct).exp_m1().abs(), 1e-3));
    }
    Ok(rep)
}

/// `max_{0=u_0≤…≤u_n=t} Σ_i B_{i−1}(u_{i−1}, u_i)` over grid split points,
/// using lines `0..n`, by a running-maximum dynamic program.
pub fn brownian_lpp_max(env: &EnvGrid, n: usize, t: f64) -> Result<f64> {
    if n == 0 || n > env.n_lines() {
        return Err(Error::IndexRange(format!("need 1 <= n <= {}, got {n}", env.n_lines())));
    }
    let (i0, i1) = (env.origin(), env.node(t)?);
    if i1 < i0 {
        return Err(Error::Precondition("need t >= 0".into()));
    }
    let b0 = &env.line_positions(0)[i0..=i1];
    let mut m: Vec<f64> = b0.iter().map(|b| b - b0[0]).collect();
    for k in 1..n {
        let bk = &env.line_positions(k)[i0..=i1];
        let mut best = f64::NEG_INFINITY;
        for (mv, b) in m.iter_mut().zip(bk) {
            best = best.max(*mv - b);
            *mv = b + best;
        }
    }
    Ok(*m.last().expect("non-empty"))
}

/// Reduces a Hermitian matrix (row-major, `n×n`) to real symmetric
/// tridiagonal form by Householder reflections; returns (diagonal,
/// off-diagonal magnitudes).
fn hermitian_tridiagonal(mut a: Vec<Complex64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let norm: f64 = (k + 1..n).map(|i| a[i * n + k].norm_sqr()).sum::<f64>().sqrt();
        off.push(norm);
        if k + 2 == n || norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1) * n + k];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { Complex64::new(1.0, 0.0) };
        let alpha = -phase * norm;
        let mut v: Vec<Complex64> = (k + 1..n).map(|i| a[i * n + k]).collect();
        v[0] -= alpha;
        let vn = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|c| *c /= vn);
        let sz = n - k - 1;
        // p = A v on the trailing block, K = v* p, w = p − K v
        let mut p = vec![Complex64::new(0.0, 0.0); sz];
        for (r, pr) in p.iter_mut().enumerate() {
            for (c, vc) in v.iter().enumerate() {
                *pr += a[(k + 1 + r) * n + k + 1 + c] * vc;
            }
        }
        let kk: Complex64 = v.iter().zip(&p).map(|(vi, pi)| vi.conj() * pi).sum();
        let w: Vec<Complex64> = p.iter().zip(&v).map(|(pi, vi)| pi - kk * vi).collect();
        for r in 0..sz {
            for c in 0..sz {
                let upd = v[r] * w[c].conj() + w[r] * v[c].conj();
                a[(k + 1 + r) * n + k + 1 + c] -= 2.0 * upd;
            }
        }
    }
    let diag = (0..n).map(|i| a[i * n + i].re).collect();
    (diag, off)
}

/// Eigenvalues below `x` of the symmetric tridiagonal matrix (Sturm count).
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let e2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { e2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) by bisection to 1e-13.
fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1] } else { 0.0 } + if i + 1 < n { off[i] } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let (mut lo, mut hi) = (lo - 1e-12, hi + 1e-12);
    while hi - lo > 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Samples an `n×n` GUE matrix with entry variance 1/(4n): real diagonal
/// N(0, 1/(4n)), off-diagonal real and imaginary parts each N(0, 1/(8n)).
pub fn sample_gue_matrix(n: usize, seed: u64, replicate: u64) -> Result<Vec<Complex64>> {
    if !(1..=64).contains(&n) {
        return Err(Error::InvalidDimension(format!("GUE size must be in 1..=64, got {n}")));
    }
    let sd = (1.0 / (4.0 * n as f64)).sqrt();
    let sd_part = sd / 2f64.sqrt();
    let mut rng = stream_rng(seed, replicate, 0);
    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        a[i * n + i] = Complex64::new(sd * d, 0.0);
        for j in i + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(sd_part * re, sd_part * im);
            a[i * n + j] = z;
            a[j * n + i] = z.conj();
        }
    }
    Ok(a)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn hermitian_extreme_eigenvalues(a: &[Complex64], n: usize) -> Result<(f64, f64)> {
    if n == 0 || a.len() != n * n {
        return Err(Error::InvalidDimension(format!("expected {n}×{n} entries")));
    }
    let (d, e) = hermitian_tridiagonal(a.to_vec(), n);
    Ok((tridiagonal_eigenvalue(&d, &e, 0), tridiagonal_eigenvalue(&d, &e, n - 1)))
}

/// Top eigenvalue of one GUE draw, keyed by `(seed, replicate)`.
pub fn sample_gue_top_eigenvalue_replicate(n: usize, seed: u64, replicate: u64) -> Result<f64> {
    let a = sample_gue_matrix(n, seed, replicate)?;
    Ok(hermitian_extreme_eigenvalues(&a, n)?.1)
}

pub fn sample_gue_top_eigenvalue(n: usize, seed: u64) -> Result<f64> {
    sample_gue_top_eigenvalue_replicate(n, seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sturm_on_diagonal_matrix() {
        let d = [3.0, -1.0, 2.0];
        let e = [0.0, 0.0];
        assert_eq!(sturm_count(&d, &e, 0.0), 1);
        assert!((tridiagonal_eigenvalue(&d, &e, 2) - 3.0).abs() < 1e-12);
        assert!((tridiagonal_eigenvalue(&d, &e, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hermitian() {
        // [[a, z], [z*, b]] has eigenvalues (a+b)/2 ± sqrt(((a−b)/2)² + |z|²)
        let (a, b, z) = (0.3, -0.2, Complex64::new(0.4, -0.5));
        let m = vec![Complex64::new(a, 0.0), z, z.conj(), Complex64::new(b, 0.0)];
        let (lo, hi) = hermitian_extreme_eigenvalues(&m, 2).unwrap();
        let r = (((a - b) / 2.0f64).powi(2) + z.norm_sqr()).sqrt();
        assert!((hi - ((a + b) / 2.0 + r)).abs() < 1e-12);
        assert!((lo - ((a + b) / 2.0 - r)).abs() < 1e-12);
    }

    #[test]
    fn tridiagonalization_preserves_trace_and_frobenius() {
        let n = 7;
        let a = sample_gue_matrix(n, 3, 0).unwrap();
        let (d, e) = hermitian_tridiagonal(a.clone(), n);
        let tr: f64 = (0..n).map(|i| a[i * n + i].re).sum();
        assert!((tr - d.iter().sum::<f64>()).abs() < 1e-12);
        let fro: f64 = a.iter().map(|c| c.norm_sqr()).sum();
        let fro_t: f64 = d.iter().map(|x| x * x).sum::<f64>() + 2.0 * e.iter().map(|x| x * x).sum::<f64>();
        assert!((fro - fro_t).abs() < 1e-12);
    }

    #[test]
    fn cumulative_trapezoid_of_constant() {
        let mut out = Vec::new();
        log_cumulative_trapezoid(&[0.0; 5], 0.25, &mut out);
        assert_eq!(out[0], f64::NEG_INFINITY);
        assert!((out[4] - 1f64.ln()).abs() < 1e-15);
        assert!((out[2] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn keys_distinguish_seed_and_replicate() {
        assert_ne!(stream_key(1, 2), stream_key(2, 1));
        assert_ne!(stream_key(0, 0), stream_key(0, 1));
    }
}
