//! The three subcommands.

use oyldp::convex::{legendre_transform, GridSpec};
use oyldp::mc::{self, McSummary};
use oyldp::rates::{self, Curve, InfConvSettings, Shape};
use oyldp::report::{Check, VerificationReport};
use oyldp::sim::{self, EnvGrid, EnvSpec};
use serde_json::{json, Value};

use crate::config::{self, Format, Settings};
use crate::{Failure, Output};

const DEFAULT_STEP: f64 = 1e-3;
const DEFAULT_REPLICATES: usize = 1000;
/// Step for last-passage maxima; the grid maximum is biased low by a
/// multiple of the square root of the step.
const DEFAULT_LPP_STEP: f64 = 1e-4;

fn shape(cfg: &Settings) -> Result<Shape, Failure> {
    Ok(Shape::new(cfg.s.unwrap_or(1.0), cfg.t.unwrap_or(1.0))?)
}

/// Header fields for every output; the thread count and output path do not
/// affect results and are left out.
fn provenance(cfg: &Settings, command: &str, seed: Option<u64>) -> Value {
    let cfg = Settings {
        threads: None,
        out: None,
        ..cfg.clone()
    };
    let digest = mc::config_digest(&serde_json::to_value(&cfg).expect("settings serialize"));
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_digest": digest,
        "config": cfg,
    })
}

fn curve_output(curve: Curve, format: Format) -> String {
    match format {
        Format::Csv => curve.to_csv(),
        Format::Json => curve.to_json(),
    }
}

/// Curves indexed by the dual variable read `--xi`; the rest read `--x`.
fn uses_xi(curve: &str) -> bool {
    matches!(curve, "lyapunov" | "lyapunov-dual" | "u-star" | "r-star")
}

pub fn compute(cfg: &Settings) -> Result<Output, Failure> {
    let curve = cfg
        .curve
        .as_deref()
        .ok_or_else(|| Failure::config("--curve: required for compute"))?;
    let sh = shape(cfg)?;
    let theta = cfg.theta.unwrap_or(1.0);
    let mut header = provenance(cfg, "compute", None);
    let format = cfg.format.unwrap_or_default();
    if curve == "free-energy" {
        header["curve"] = json!(curve);
        let mut c = Curve::new(header, &["s", "t", "value"]);
        c.push(vec![sh.s(), sh.t(), rates::free_energy(sh)?]);
        return Ok(Output::data(curve_output(c, format)));
    }
    let (field, default) = if uses_xi(curve) { ("xi", "0:3:301") } else { ("x", "0:5:101") };
    let text = if field == "xi" { cfg.xi.as_deref() } else { cfg.x.as_deref() };
    let grid = config::grid(field, text.unwrap_or(default))?;
    let known = [
        "lyapunov",
        "lyapunov-dual",
        "rate",
        "stationary-u",
        "brownian-r",
        "u-star",
        "r-star",
        "j-gue",
    ];
    if !known.contains(&curve) {
        return Err(Failure::config(format!(
            "--curve: unknown curve {curve:?}; expected free-energy or one of {}",
            known.join(", ")
        )));
    }
    let mut c = rates::tabulate(curve, sh, theta, grid)?;
    if let Value::Object(extra) = c.header.take() {
        for (k, v) in extra {
            header[k] = v;
        }
    }
    c.header = header;
    c.columns[0] = field.to_string();
    Ok(Output::data(curve_output(c, format)))
}

fn require_seed(cfg: &Settings) -> Result<u64, Failure> {
    cfg.seed
        .ok_or_else(|| Failure::config("--seed: required (or set OYLDP_SEED)"))
}

/// Rows of `(label columns ++ summary columns)` with a JSON header.
fn summary_table(header: Value, label_cols: &[&str], extra_cols: &[&str], rows: Vec<(Vec<f64>, McSummary, Vec<f64>)>, format: Format) -> String {
    match format {
        Format::Json => {
            let items: Vec<Value> = rows
                .iter()
                .map(|(labels, s, extra)| {
                    let mut v = json!({ "summary": s });
                    for (k, x) in label_cols.iter().zip(labels).chain(extra_cols.iter().zip(extra)) {
                        v[*k] = finite_or_text(*x);
                    }
                    v
                })
                .collect();
            serde_json::to_string_pretty(&json!({ "header": header, "rows": items })).expect("rows serialize")
        }
        Format::Csv => {
            let mut cols: Vec<&str> = label_cols.to_vec();
            cols.extend(["estimate", "se", "ci_low", "ci_high", "replicates", "censored"]);
            cols.extend(extra_cols);
            let mut c = Curve::new(header, &cols);
            for (labels, s, extra) in rows {
                let mut r = labels;
                r.extend([s.mean, s.std_error, s.ci_low, s.ci_high, s.n_replicates as f64, f64::from(u8::from(s.censored))]);
                r.extend(extra);
                c.push(r);
            }
            c.to_csv()
        }
    }
}

fn finite_or_text(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(oyldp::convex::fmt_real(x))
    }
}

pub fn simulate(cfg: &Settings) -> Result<Output, Failure> {
    let estimator = cfg
        .estimator
        .as_deref()
        .ok_or_else(|| Failure::config("--estimator: required for simulate"))?;
    let seed = require_seed(cfg)?;
    let step = cfg.step.unwrap_or(DEFAULT_STEP);
    let replicates = cfg.replicates.unwrap_or(DEFAULT_REPLICATES);
    if replicates < mc::MIN_REPLICATES {
        return Err(Failure::config(format!(
            "--replicates: need at least {}, got {replicates}",
            mc::MIN_REPLICATES
        )));
    }
    let format = cfg.format.unwrap_or_default();
    let header = provenance(cfg, "simulate", Some(seed));
    let n_list = config::scales(cfg.n.as_deref().unwrap_or("2,3,4,5,6"))?;
    let sh = shape(cfg)?;
    let run = || -> Result<(String, Vec<String>), Failure> {
        match estimator {
            "first-moment" => {
                let lines = cfg.lines.unwrap_or(3);
                let horizon = cfg.horizon.unwrap_or(2.0);
                let s = mc::mc_log_first_moment(Shape::new(lines as f64, horizon)?, 1, step, replicates, seed)?;
                let warnings = s.warnings.clone();
                let exact = mc::log_first_moment_exact(lines, horizon);
                let rows = vec![(vec![lines as f64, horizon], s, vec![exact])];
                Ok((summary_table(header, &["lines", "horizon"], &["analytic"], rows, format), warnings))
            }
            "lyapunov" => {
                let xis = config::values("xi", cfg.xi.as_deref().unwrap_or("1"))?;
                let mut rows = Vec::new();
                let mut warnings = Vec::new();
                for xi in xis {
                    let limit = rates::lyapunov(sh, xi)?;
                    for s in mc::mc_lyapunov(sh, xi, &n_list, step, replicates, seed)? {
                        let n = s.n.unwrap_or(1);
                        let (lines, horizon) = mc::scaled_dims(sh, n);
                        // exact at finite n only for the zeroth and first moments
                        let finite = if xi == 1.0 {
                            mc::log_first_moment_exact(lines, horizon) / n as f64
                        } else if xi == 0.0 {
                            0.0
                        } else {
                            f64::NAN
                        };
                        warnings.extend(s.warnings.iter().map(|w| format!("xi={xi} n={n}: {w}")));
                        rows.push((vec![xi, n as f64], s, vec![finite, limit]));
                    }
                }
                let table = summary_table(header, &["xi", "n"], &["analytic_finite_n", "lyapunov_limit"], rows, format);
                Ok((table, warnings))
            }
            "tail" => {
                let levels = config::values("x", cfg.x.as_deref().ok_or_else(|| Failure::config("--x: tail level required"))?)?;
                let mut rows = Vec::new();
                let mut warnings = Vec::new();
                for r in levels {
                    let bound = rates::gue_tail_bound(sh, r)?.unwrap_or(f64::NAN);
                    let rate = rates::rate_function(sh, r)?;
                    for s in mc::mc_tail_probability(sh, r, &n_list, step, replicates, seed)? {
                        let n = s.n.unwrap_or(1);
                        warnings.extend(s.warnings.iter().map(|w| format!("r={r} n={n}: {w}")));
                        rows.push((vec![r, n as f64], s, vec![rate, bound]));
                    }
                }
                warnings.dedup();
                let table = summary_table(header, &["r", "n"], &["rate_function", "gue_bound"], rows, format);
                Ok((table, warnings))
            }
            "moment-bound" => {
                let xi: f64 = config::values("xi", cfg.xi.as_deref().unwrap_or("2"))?[0];
                let lines = cfg.lines.unwrap_or(3);
                let horizon = cfg.horizon.unwrap_or(1.0);
                let rep = mc::check_moment_bound(Shape::new(lines as f64, horizon)?, xi, 1, step, replicates, seed)?;
                Ok((report_output(rep.clone(), header, format), rep.warnings))
            }
            other => Err(Failure::config(format!(
                "--estimator: unknown estimator {other:?}; expected first-moment, lyapunov, tail or moment-bound"
            ))),
        }
    };
    let (text, warnings) = mc::with_threads(cfg.threads, run)??;
    Ok(Output { text, warnings, failed: false, summary: None })
}

fn report_output(mut rep: VerificationReport, header: Value, format: Format) -> String {
    if let Value::Object(h) = header {
        for (k, v) in h {
            rep.provenance.entry(k).or_insert(v);
        }
    }
    match format {
        Format::Json => rep.to_json(),
        Format::Csv => rep.to_table(),
    }
}

/// Duality, homogeneity, differentiability at 0, Legendre consistency and
/// the variational identity for one shape and θ.
pub fn analytic_suite(sh: Shape, theta: f64) -> Result<VerificationReport, Failure> {
    let mut rep = VerificationReport::new("analytic");
    let rho = rates::free_energy(sh)?;
    let mut dual = 0.0f64;
    for k in 1..=30 {
        let xi = 0.1 * k as f64;
        dual = dual.max((rates::lyapunov(sh, xi)? - rates::lyapunov_dual_form(sh, xi)?).abs());
    }
    rep.push(Check::within("dual form", dual, 1e-10));
    let c = 2.5;
    let big = sh.scaled(c)?;
    let mut homog = 0.0f64;
    for xi in [-1.5, -0.3, 0.4, 1.0, 2.7] {
        homog = homog.max((rates::lyapunov(big, xi)? - c * rates::lyapunov(sh, xi)?).abs());
    }
    for dx in [0.2, 1.0, 3.0] {
        homog = homog.max((rates::rate_function(big, c * (rho + dx))? - c * rates::rate_function(sh, rho + dx)?).abs());
    }
    rep.push(Check::within("homogeneity", homog, 1e-8));
    let h = 1e-4;
    let slope = (rates::lyapunov(sh, h)? - rates::lyapunov(sh, -h)?) / (2.0 * h);
    rep.push(Check::within("derivative at 0", (slope - rho).abs(), 1e-3));
    let lam = rates::lyapunov_sampled(sh, GridSpec::new(0.0, 20.0, 20001)?)?;
    let conj = legendre_transform(&lam, rho, rho + 5.0, 11)?;
    let mut leg = 0.0f64;
    for (i, v) in conj.values().iter().enumerate() {
        leg = leg.max((v - rates::rate_function(sh, conj.x(i))?).abs());
    }
    rep.push(Check::within("Legendre conjugate", leg, 1e-4));
    rep.push(Check::within("rate at free energy", rates::rate_function(sh, rho)?.abs(), 1e-8));
    let below = rates::rate_function(sh, rho - 0.1)?;
    rep.push(Check::within("rate below free energy", if below == f64::INFINITY { 0.0 } else { 1.0 }, 0.0));
    let xs = rates::identity_points(sh, theta, 21)?;
    rep.merge(rates::verify_variational_identity(sh, theta, &xs, &InfConvSettings::default(), 5e-3)?);
    rep.set("s", sh.s());
    rep.set("t", sh.t());
    rep.set("theta", theta);
    Ok(rep)
}

pub fn verify(cfg: &Settings) -> Result<Output, Failure> {
    let suite = cfg.suite.as_deref().unwrap_or("analytic");
    let sh = shape(cfg)?;
    let theta = cfg.theta.unwrap_or(1.0);
    let needs_seed = suite != "analytic";
    let seed = if needs_seed { Some(require_seed(cfg)?) } else { cfg.seed };
    let header = provenance(cfg, "verify", seed);
    let run = || -> Result<VerificationReport, Failure> {
        match suite {
            "analytic" => analytic_suite(sh, theta),
            "burke" => {
                let replicates = cfg.replicates.unwrap_or(5000);
                let trunc = cfg.trunc_t.unwrap_or_else(|| sim::default_trunc_t(theta));
                Ok(mc::burke_test(theta, replicates, cfg.step.unwrap_or(DEFAULT_STEP), trunc, seed.unwrap_or(0))?)
            }
            "gue" => {
                let n = config::scales(cfg.n.as_deref().unwrap_or("5"))?;
                let replicates = cfg.replicates.unwrap_or(5000);
                let step = cfg.step.unwrap_or(DEFAULT_LPP_STEP);
                let mut rep = VerificationReport::new("gue");
                for k in n {
                    rep.merge(mc::gue_identity_test(k, replicates, step, seed.unwrap_or(0))?);
                }
                Ok(rep)
            }
            "stationary" => {
                let n = cfg.lines.unwrap_or(3);
                let t = cfg.horizon.unwrap_or(1.0);
                let step = cfg.step.unwrap_or(DEFAULT_STEP);
                let trunc = cfg.trunc_t.unwrap_or_else(|| sim::default_trunc_t(theta));
                let spec = EnvSpec::new(n + 1, t, step, trunc, true)?;
                let env = EnvGrid::sample(spec, seed.unwrap_or(0), 0)?;
                Ok(sim::verify_stationary_decomposition(&env, theta, n, t)?)
            }
            other => Err(Failure::config(format!(
                "--suite: unknown suite {other:?}; expected analytic, burke, gue or stationary"
            ))),
        }
    };
    let rep = mc::with_threads(cfg.threads, run)??;
    Ok(Output {
        failed: !rep.passed(),
        warnings: rep.warnings.clone(),
        summary: Some(rep.to_table()),
        text: report_output(rep, header, Format::Json),
    })
}
