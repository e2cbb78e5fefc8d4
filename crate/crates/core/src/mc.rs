//! Monte Carlo estimators over sampled environments and the statistical
//! tests that compare simulation with the analytic layer.
//!
//! Replicate `i` always draws its environment from `(seed, i)`, and
//! per-replicate results are collected in index order before any
//! reduction, so summaries do not depend on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rates::{self, Shape};
use crate::report::{Check, VerificationReport};
use crate::sim::{self, EnvGrid, EnvSpec};
use crate::specfun;

pub const MIN_REPLICATES: usize = 100;
/// Share of the empirical mean carried by the top replicate above which a
/// moment estimate is flagged as heavy-tailed.
pub const HEAVY_TAIL_SHARE: f64 = 0.5;
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// Scale index for sequences over `n`; absent for single estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub n_replicates: usize,
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
    pub config_digest: String,
    /// Set when no replicate hit a tail event; `mean` is then a lower bound.
    #[serde(default)]
    pub censored: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl McSummary {
    fn normal(n: Option<usize>, replicates: usize, mean: f64, se: f64, seed: u64, digest: &str) -> Self {
        McSummary {
            n,
            n_replicates: replicates,
            mean,
            std_error: se,
            ci_low: mean - Z95 * se,
            ci_high: mean + Z95 * se,
            seed,
            config_digest: digest.to_string(),
            censored: false,
            warnings: Vec::new(),
        }
    }
}

/// Hex SHA-256 of the canonical JSON of an estimator configuration.
pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// Runs `f` on a dedicated pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Precondition(format!("thread pool: {e}"))),
    }
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < MIN_REPLICATES {
        return Err(Error::Precondition(format!(
            "need at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    Ok(())
}

/// Line count and horizon at scale `n` for direction `(s, t)`.
pub fn scaled_dims(shape: Shape, n: usize) -> (usize, f64) {
    ((n as f64 * shape.s()).floor() as usize, n as f64 * shape.t())
}

/// Log of the chamber volume `T^{N−1}/(N−1)!`.
pub fn log_chamber_volume(lines: usize, horizon: f64) -> f64 {
    let k = lines as f64 - 1.0;
    k * horizon.ln() - specfun::ln_gamma(k + 1.0).expect("positive argument")
}

/// Exact `log E[Z]` for `N` lines over `[0, T]`: chamber volume plus `T/2`.
pub fn log_first_moment_exact(lines: usize, horizon: f64) -> f64 {
    log_chamber_volume(lines, horizon) + 0.5 * horizon
}

/// `log Z` through all `lines` rows over `[0, horizon]` for each replicate.
pub fn sample_log_partitions(lines: usize, horizon: f64, step: f64, replicates: usize, seed: u64) -> Result<Vec<f64>> {
    if lines < 1 {
        return Err(Error::InvalidDimension("need at least one line".into()));
    }
    let spec = EnvSpec::new(lines, horizon, step, 0.0, false)?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let env = EnvGrid::sample(spec, seed, i)?;
            sim::log_partition(&env, 0, lines - 1, 0.0, horizon).map(|w| w.value())
        })
        .collect()
}

/// `log ((1/R) Σ e^{ℓ_i})` with its delta-method standard error and the
/// share of the sum carried by the largest term.
fn log_mean_exp(logs: &[f64]) -> (f64, f64, f64) {
    let r = logs.len() as f64;
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    let log_mean = m + sum.ln() - r.ln();
    // w_i = e^{ℓ_i} / mean has sample mean 1
    let var: f64 = logs.iter().map(|l| ((l - log_mean).exp() - 1.0).powi(2)).sum::<f64>() / (r - 1.0);
    let se = (var / r).sqrt();
    (log_mean, se, 1.0 / sum)
}

fn heavy_tail_warning(share: f64) -> Option<String> {
    (share > HEAVY_TAIL_SHARE).then(|| {
        format!("heavy tail: top replicate carries {:.1}% of the empirical mean", 100.0 * share)
    })
}

/// `(1/n) log` of the empirical mean of `Z_{1,N}(0, T)` with `N = ⌊ns⌋`,
/// `T = nt`, and a delta-method standard error. With `n = 1` and integer
/// `s` this is `log E[Z]` for `N = s` lines on `[0, t]`.
pub fn mc_log_first_moment(shape: Shape, n: usize, step: f64, replicates: usize, seed: u64) -> Result<McSummary> {
    Ok(mc_lyapunov(shape, 1.0, &[n], step, replicates, seed)?.remove(0))
}

/// For each `n`, `(1/n) log` of the empirical mean of `Z^ξ` with `N = ⌊ns⌋`
/// lines and horizon `nt`.
pub fn mc_lyapunov(
    shape: Shape,
    xi: f64,
    n_list: &[usize],
    step: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<McSummary>> {
    check_replicates(replicates)?;
    if !xi.is_finite() {
        return Err(Error::domain("mc_lyapunov", xi, "xi must be finite"));
    }
    check_n_list(shape, n_list)?;
    let digest = config_digest(&serde_json::json!({
        "estimator": "lyapunov", "s": shape.s(), "t": shape.t(), "xi": xi,
        "n": n_list, "step": step, "replicates": replicates, "seed": seed,
    }));
    n_list
        .iter()
        .map(|&n| {
            let (lines, horizon) = scaled_dims(shape, n);
            let logs = sample_log_partitions(lines, horizon, step, replicates, seed)?;
            Ok(summarize_log_moment(&logs, xi, n, seed, &digest))
        })
        .collect()
}

/// `(1/n) log` of the mean of `e^{ξℓ_i}` over the given log weights, with
/// a delta-method standard error and the heavy-tail diagnostic.
pub fn summarize_log_moment(logs: &[f64], xi: f64, n: usize, seed: u64, digest: &str) -> McSummary {
    let scaled: Vec<f64> = logs.iter().map(|l| xi * l).collect();
    let (lm, se, share) = log_mean_exp(&scaled);
    let nf = n as f64;
    let mut out = McSummary::normal(Some(n), logs.len(), lm / nf, se / nf, seed, digest);
    out.warnings.extend(heavy_tail_warning(share));
    out
}

fn check_n_list(shape: Shape, n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("n_list must be non-empty and strictly ascending".into()));
    }
    if let Some(&n) = n_list.iter().find(|&&n| scaled_dims(shape, n).0 < 2) {
        return Err(Error::Precondition(format!("n = {n} yields fewer than 2 lines")));
    }
    Ok(())
}

/// Checks the empirical `E[Z^ξ]` for `N = ⌊ns⌋`, `T = nt` against
/// `|A_{N,T}|^ξ e^{ξ²T/2}`, allowing 3 standard errors on the log scale.
pub fn check_moment_bound(
    shape: Shape,
    xi: f64,
    n: usize,
    step: f64,
    replicates: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if !(xi.abs() > 1.0 && xi.is_finite()) {
        return Err(Error::domain("check_moment_bound", xi, "|xi| > 1"));
    }
    check_replicates(replicates)?;
    check_n_list(shape, &[n])?;
    let (lines, horizon) = scaled_dims(shape, n);
    let logs = sample_log_partitions(lines, horizon, step, replicates, seed)?;
    let scaled: Vec<f64> = logs.iter().map(|l| xi * l).collect();
    let (lm, se, share) = log_mean_exp(&scaled);
    let log_bound = xi * log_chamber_volume(lines, horizon) + 0.5 * xi * xi * horizon;
    let mut rep = VerificationReport::new("moment bound");
    rep.set("seed", seed);
    rep.set("step", step);
    rep.set("replicates", replicates as u64);
    rep.set("xi", xi);
    rep.set("lines", lines as u64);
    rep.set("horizon", horizon);
    rep.set("log_moment", lm);
    rep.set("log_moment_se", se);
    rep.set("log_bound", log_bound);
    if let Some(w) = heavy_tail_warning(share) {
        rep.warn(w);
    }
    rep.push(
        Check::within("E[Z^xi] <= bound + 3 SE", (lm - 3.0 * se - log_bound).max(0.0), 0.0)
            .with_detail(format!("log margin {:.6}", log_bound - lm)),
    );
    Ok(rep)
}

/// Wilson score interval for `hits` successes in `trials`.
pub fn wilson_interval(hits: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hits == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// For each `n`, `−(1/n) log P̂(log Z ≥ nr)` with a Wilson interval mapped
/// through the same transform. Cells without hits are censored: `mean` and
/// `ci_low` then carry the lower bound from the Wilson upper limit.
pub fn mc_tail_probability(
    shape: Shape,
    r: f64,
    n_list: &[usize],
    step: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<McSummary>> {
    check_replicates(replicates)?;
    check_n_list(shape, n_list)?;
    if !r.is_finite() {
        return Err(Error::domain("mc_tail_probability", r, "finite r"));
    }
    let digest = config_digest(&serde_json::json!({
        "estimator": "tail", "s": shape.s(), "t": shape.t(), "r": r,
        "n": n_list, "step": step, "replicates": replicates, "seed": seed,
    }));
    let mut out: Vec<McSummary> = n_list
        .iter()
        .map(|&n| {
            let (lines, horizon) = scaled_dims(shape, n);
            let logs = sample_log_partitions(lines, horizon, step, replicates, seed)?;
            let nf = n as f64;
            let hits = logs.iter().filter(|&&l| l >= nf * r).count();
            Ok(tail_summary(n, hits, replicates, seed, &digest))
        })
        .collect::<Result<_>>()?;
    if out.iter().all(|c| c.censored) {
        for c in &mut out {
            c.warnings.push("all cells censored: no replicate reached the event at any n".into());
        }
    }
    Ok(out)
}

fn tail_summary(n: usize, hits: usize, replicates: usize, seed: u64, digest: &str) -> McSummary {
    let nf = n as f64;
    let rate = |p: f64| if p > 0.0 { -p.ln() / nf } else { f64::INFINITY };
    let (lo, hi) = wilson_interval(hits, replicates, Z95);
    let (ci_low, ci_high) = (rate(hi), rate(lo));
    let censored = hits == 0;
    let mean = if censored { ci_low } else { rate(hits as f64 / replicates as f64) };
    let se = if ci_high.is_finite() { (ci_high - ci_low) / (2.0 * Z95) } else { f64::INFINITY };
    McSummary {
        n: Some(n),
        n_replicates: replicates,
        mean,
        std_error: se,
        ci_low: ci_low.min(mean),
        ci_high: ci_high.max(mean),
        seed,
        config_digest: digest.to_string(),
        censored,
        warnings: Vec::new(),
    }
}

/// Asymptotic Kolmogorov critical values `c(α)/√n_eff` at α ∈ {0.10, 0.05, 0.01}.
fn critical_values(n_eff: f64) -> BTreeMap<String, f64> {
    [("0.10", 1.224), ("0.05", 1.358), ("0.01", 1.628)]
        .into_iter()
        .map(|(k, c)| (k.to_string(), c / n_eff.sqrt()))
        .collect()
}

fn sorted_sample(samples: &[f64], what: &str) -> Result<Vec<f64>> {
    if samples.len() < MIN_REPLICATES {
        return Err(Error::Precondition(format!(
            "{what} needs at least {MIN_REPLICATES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::DegenerateSample(format!("{what}: NaN sample")));
    }
    if samples.iter().all(|&x| x == samples[0]) {
        return Err(Error::DegenerateSample(format!("{what}: all samples equal")));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample Kolmogorov-Smirnov statistic against `cdf`, with critical
/// values keyed by level ("0.10", "0.05", "0.01").
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, BTreeMap<String, f64>)> {
    let v = sorted_sample(samples, "ks_test")?;
    let n = v.len() as f64;
    let d = v.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    Ok((d, critical_values(n)))
}

/// Two-sample Kolmogorov-Smirnov distance with critical values for the
/// effective size `nm/(n+m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, BTreeMap<String, f64>)> {
    let a = sorted_sample(a, "ks_two_sample")?;
    let b = sorted_sample(b, "ks_two_sample")?;
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    Ok((d, critical_values(n_eff)))
}

/// Distance below which the GUE/LPP samples count as matching.
pub const GUE_KS_DISTANCE: f64 = 0.05;

/// GUE top eigenvalues and scaled Brownian last-passage maxima (over
/// `[0, 1]`, lines `0..n`) for `replicates` independent draws each.
pub fn gue_and_lpp_samples(n: usize, replicates: usize, step: f64, seed: u64, scale: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let gue = (0..replicates as u64)
        .into_par_iter()
        .map(|i| sim::sample_gue_top_eigenvalue_replicate(n, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let spec = EnvSpec::new(n, 1.0, step, 0.0, false)?;
    // LPP draws use replicate ids disjoint from the matrix draws
    let offset = 1u64 << 48;
    let lpp = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let env = EnvGrid::sample(spec, seed, offset + i)?;
            sim::brownian_lpp_max(&env, n, 1.0).map(|m| scale * m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gue, lpp))
}

/// Two-sample KS between GUE top eigenvalues and LPP maxima multiplied
/// by `scale`.
pub fn gue_lpp_comparison(n: usize, replicates: usize, step: f64, seed: u64, scale: f64) -> Result<VerificationReport> {
    if !(2..=10).contains(&n) {
        return Err(Error::InvalidDimension(format!("GUE identity test needs 2 <= n <= 10, got {n}")));
    }
    check_replicates(replicates)?;
    let (gue, lpp) = gue_and_lpp_samples(n, replicates, step, seed, scale)?;
    let (d, crit) = ks_two_sample(&gue, &lpp)?;
    let mut rep = VerificationReport::new(format!("gue identity n={n}"));
    rep.set("seed", seed);
    rep.set("step", step);
    rep.set("replicates", replicates as u64);
    rep.set("n", n as u64);
    rep.set("scale", scale);
    rep.set("ks_critical_0.01", crit["0.01"]);
    rep.push(
        Check::within("two-sample KS distance", d, GUE_KS_DISTANCE)
            .with_detail(format!("1% critical value {:.5}", crit["0.01"])),
    );
    Ok(rep)
}

/// Two-sample KS between GUE top eigenvalues and `(1/(2√n))`-scaled LPP maxima.
pub fn gue_identity_test(n: usize, replicates: usize, step: f64, seed: u64) -> Result<VerificationReport> {
    gue_lpp_comparison(n, replicates, step, seed, 0.5 / (n as f64).sqrt())
}

/// `(r_1(0), r_2(0))` from the stationary model for each replicate.
pub fn stationary_r_pairs(theta: f64, replicates: usize, step: f64, trunc_t: f64, seed: u64) -> Result<Vec<(f64, f64, f64)>> {
    let spec = EnvSpec::new(3, 4.0 * step, step, trunc_t, true)?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let env = EnvGrid::sample(spec, seed, i)?;
            let seq = sim::stationary_r_sequence(&env, theta, 2, 0.0)?;
            let rem = seq.remainder.iter().cloned().fold(0.0, f64::max);
            Ok((seq.r[0], seq.r[1], rem))
        })
        .collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// KS test of `e^{−r_1(0)}` against Γ(θ, 1) at the 1% level, and the
/// sample correlation of `r_1(0)`, `r_2(0)` against 3 standard errors.
pub fn burke_test(theta: f64, replicates: usize, step: f64, trunc_t: f64, seed: u64) -> Result<VerificationReport> {
    check_replicates(replicates)?;
    let pairs = stationary_r_pairs(theta, replicates, step, trunc_t, seed)?;
    let r1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let r2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let g: Vec<f64> = r1.iter().map(|r| (-r).exp()).collect();
    let (d, crit) = ks_test(&g, |x| specfun::gamma_cdf(theta, x).unwrap_or(f64::NAN))?;
    let corr = correlation(&r1, &r2);
    let se = 1.0 / (replicates as f64 - 1.0).sqrt();
    let mut rep = VerificationReport::new(format!("burke theta={theta}"));
    rep.set("seed", seed);
    rep.set("step", step);
    rep.set("trunc_T", trunc_t);
    rep.set("replicates", replicates as u64);
    rep.set("theta", theta);
    let worst = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    rep.set("max_truncation_remainder", worst);
    if worst > sim::TRUNCATION_WARN {
        rep.warn(format!("truncation remainder up to {worst:.3e}"));
    }
    rep.push(Check::within("KS e^{-r_1} vs Gamma(theta,1)", d, crit["0.01"]));
    rep.push(Check::within("corr(r_1, r_2)", corr.abs(), 3.0 * se).with_detail(format!("correlation {corr:.5}")));
    Ok(rep)
}

/// The right-tail bound `s·J_GUE(...)` when its hypothesis holds at `r`.
pub fn tail_bound(shape: Shape, r: f64) -> Result<Option<f64>> {
    rates::gue_tail_bound(shape, r)
}
