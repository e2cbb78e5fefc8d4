//! Run configuration: command-line flags over config-file values over
//! defaults.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use oyldp::convex::GridSpec;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Compute,
    Simulate,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// A number or a string in the config file; lists and grids stay strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spec {
    Num(f64),
    Text(String),
    List(Vec<f64>),
}

impl Spec {
    fn into_text(self) -> String {
        match self {
            Spec::Num(v) => v.to_string(),
            Spec::Text(s) => s,
            Spec::List(v) => v.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        }
    }
}

/// Every setting, all optional; shared by flags and the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Curve to tabulate (compute).
    #[arg(long)]
    pub curve: Option<String>,
    /// Estimator to run (simulate).
    #[arg(long)]
    pub estimator: Option<String>,
    /// Check suite to run (verify).
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// A value, a comma list, or a grid `min:max:count`.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "spec_text")]
    pub xi: Option<String>,
    /// A value, a comma list, or a grid `min:max:count`.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "spec_text")]
    pub x: Option<String>,
    /// Scales `n` as a comma list.
    #[arg(long)]
    #[serde(default, deserialize_with = "spec_text")]
    pub n: Option<String>,
    #[arg(long)]
    pub lines: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long = "trunc-T")]
    #[serde(rename = "trunc_T")]
    pub trunc_t: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Exit with status 4 when any warning is raised.
    #[arg(long)]
    #[serde(default)]
    pub strict: bool,
}

/// Config-file layout: the settings plus an optional command.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    #[serde(flatten)]
    pub settings: Settings,
}

fn spec_text<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(Option::<Spec>::deserialize(d)?.map(Spec::into_text))
}

impl Settings {
    /// `self` where set, otherwise `file`.
    pub fn over(self, file: Settings) -> Settings {
        Settings {
            curve: self.curve.or(file.curve),
            estimator: self.estimator.or(file.estimator),
            suite: self.suite.or(file.suite),
            s: self.s.or(file.s),
            t: self.t.or(file.t),
            theta: self.theta.or(file.theta),
            xi: self.xi.or(file.xi),
            x: self.x.or(file.x),
            n: self.n.or(file.n),
            lines: self.lines.or(file.lines),
            horizon: self.horizon.or(file.horizon),
            step: self.step.or(file.step),
            trunc_t: self.trunc_t.or(file.trunc_t),
            replicates: self.replicates.or(file.replicates),
            seed: self.seed.or(file.seed),
            threads: self.threads.or(file.threads),
            out: self.out.or(file.out),
            format: self.format.or(file.format),
            strict: self.strict || file.strict,
        }
    }
}

pub fn load_file(path: &std::path::Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("--config: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("--config {}: {e}", path.display())))
}

/// Seed from the settings, else from `OYLDP_SEED`.
pub fn resolve_seed(settings: &Settings) -> Result<Option<u64>, Failure> {
    if settings.seed.is_some() {
        return Ok(settings.seed);
    }
    match std::env::var("OYLDP_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("OYLDP_SEED: not an unsigned integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Parses `field` as a grid `min:max:count`, a comma list, or one value.
pub fn values(field: &str, text: &str) -> Result<Vec<f64>, Failure> {
    if text.contains(':') {
        let grid: GridSpec = text.parse().map_err(|e| Failure::config(format!("--{field}: {e}")))?;
        return Ok(grid.nodes().collect());
    }
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Failure::config(format!("--{field}: bad number {p:?} in {text:?}")))
        })
        .collect()
}

/// Parses `field` as a grid only.
pub fn grid(field: &str, text: &str) -> Result<GridSpec, Failure> {
    text.parse().map_err(|e| Failure::config(format!("--{field}: {e}")))
}

pub fn scales(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Failure::config(format!("--n: bad integer {p:?} in {text:?}")))
        })
        .collect()
}
