//! Named numerical checks with residuals and tolerances.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::convex::fmt_real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    /// Passes when `residual <= tolerance`; a NaN residual fails.
    pub fn within(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub checks: Vec<Check>,
    /// Seed, grid step, truncation and any other inputs worth replaying.
    pub provenance: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        VerificationReport {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.provenance.insert(key.to_string(), value.into());
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Largest residual among the checks, NaN-propagating.
    pub fn max_residual(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.residual)
            .fold(0.0, |m, r| if r.is_nan() || m.is_nan() { f64::NAN } else { m.max(r) })
    }

    pub fn merge(&mut self, other: VerificationReport) {
        let prefix = other.name.clone();
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
        self.warnings.extend(other.warnings.into_iter().map(|w| format!("{prefix}: {w}")));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, one row per check.
    pub fn to_table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.name);
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "{:<width$}  {:>24}  {:>24}  result", "check", "residual", "tolerance");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<width$}  {:>24}  {:>24}  {}",
                c.name,
                fmt_real(c.residual),
                fmt_real(c.tolerance),
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_residual_fails() {
        let c = Check::within("x", f64::NAN, 1.0);
        assert!(!c.passed);
    }

    #[test]
    fn table_and_json() {
        let mut r = VerificationReport::new("demo");
        r.set("seed", 7);
        r.push(Check::within("a", 1e-12, 1e-9));
        r.push(Check::within("b", 2.0, 1.0));
        assert!(!r.passed());
        assert_eq!(r.max_residual(), 2.0);
        let t = r.to_table();
        assert!(t.contains("FAIL") && t.contains("seed"));
        let back: VerificationReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
