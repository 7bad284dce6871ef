//! Check records and the JSON report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{Command, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

/// How `measured` is compared with `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    /// `|measured − target| ≤ tolerance`.
    Within,
    Equal,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// Verbatim phrase locating the claim being checked.
    pub anchor: String,
    pub measured: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub comparison: Comparison,
    pub status: Status,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl CheckRecord {
    fn new(name: impl Into<String>, anchor: &str, measured: f64, target: Option<f64>, tolerance: Option<f64>, comparison: Comparison, pass: Option<bool>) -> CheckRecord {
        let status = match pass {
            Some(true) => Status::Pass,
            Some(false) => Status::Fail,
            None => Status::Info,
        };
        CheckRecord { name: name.into(), anchor: anchor.to_string(), measured, target, tolerance, comparison, status, note: String::new() }
    }

    /// Passes when `measured ≤ bound` (NaN fails).
    pub fn at_most(name: impl Into<String>, anchor: &str, measured: f64, bound: f64) -> CheckRecord {
        CheckRecord::new(name, anchor, measured, Some(bound), None, Comparison::AtMost, Some(measured <= bound))
    }

    pub fn at_least(name: impl Into<String>, anchor: &str, measured: f64, bound: f64) -> CheckRecord {
        CheckRecord::new(name, anchor, measured, Some(bound), None, Comparison::AtLeast, Some(measured >= bound))
    }

    pub fn within(name: impl Into<String>, anchor: &str, measured: f64, target: f64, tolerance: f64) -> CheckRecord {
        let ok = (measured - target).abs() <= tolerance;
        CheckRecord::new(name, anchor, measured, Some(target), Some(tolerance), Comparison::Within, Some(ok))
    }

    /// Exact equality, for counts.
    pub fn equal(name: impl Into<String>, anchor: &str, measured: f64, target: f64) -> CheckRecord {
        CheckRecord::new(name, anchor, measured, Some(target), None, Comparison::Equal, Some(measured == target))
    }

    /// A boolean property; `measured` is 1 when it holds.
    pub fn holds(name: impl Into<String>, anchor: &str, ok: bool) -> CheckRecord {
        CheckRecord::new(name, anchor, if ok { 1.0 } else { 0.0 }, Some(1.0), None, Comparison::Equal, Some(ok))
    }

    pub fn info(name: impl Into<String>, anchor: &str, measured: f64) -> CheckRecord {
        CheckRecord::new(name, anchor, measured, None, None, Comparison::None, None)
    }

    /// Informational value reported next to a reference it is not required to meet.
    pub fn info_against(name: impl Into<String>, anchor: &str, measured: f64, reference: f64) -> CheckRecord {
        CheckRecord::new(name, anchor, measured, Some(reference), None, Comparison::None, None)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> CheckRecord {
        self.note = note.into();
        self
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

impl fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "info",
        };
        write!(f, "{tag} {}: {:.6e}", self.name, self.measured)?;
        match (self.comparison, self.target, self.tolerance) {
            (Comparison::AtMost, Some(t), _) => write!(f, " <= {t:.3e}")?,
            (Comparison::AtLeast, Some(t), _) => write!(f, " >= {t:.3e}")?,
            (Comparison::Within, Some(t), Some(tol)) => write!(f, " = {t} +- {tol:.1e}")?,
            (Comparison::Equal, Some(t), _) => write!(f, " == {t}")?,
            (Comparison::None, Some(t), _) => write!(f, " (reference {t:.3e})")?,
            _ => {}
        }
        if !self.note.is_empty() {
            write!(f, " [{}]", self.note)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub precision: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Environment {
        Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            precision: "f64 (IEEE 754 binary64)".into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub total_seconds: f64,
    pub suites: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: Command,
    pub config: ExperimentConfig,
    pub environment: Environment,
    pub records: Vec<CheckRecord>,
    /// Per-suite data beyond the checks: resolved parameters, iteration histories, profiles.
    pub series: BTreeMap<String, serde_json::Value>,
    pub timing: Timing,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Report {
        Report {
            command: config.command,
            config: config.clone(),
            environment: Environment::current(),
            records: Vec::new(),
            series: BTreeMap::new(),
            timing: Timing { threads: rayon::current_num_threads(), ..Timing::default() },
        }
    }

    pub fn push(&mut self, r: CheckRecord) {
        self.records.push(r);
    }

    pub fn passed(&self) -> bool {
        !self.records.iter().any(CheckRecord::failed)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |s: Status| self.records.iter().filter(|r| r.status == s).count();
        (c(Status::Pass), c(Status::Fail), c(Status::Info))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The JSON form without the timing block; identical across runs with the same config.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("reports serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses_follow_comparisons() {
        assert_eq!(CheckRecord::at_most("a", "x", 1e-9, 1e-8).status, Status::Pass);
        assert_eq!(CheckRecord::at_most("a", "x", f64::NAN, 1e-8).status, Status::Fail);
        assert_eq!(CheckRecord::at_least("a", "x", 1.8, 1.9).status, Status::Fail);
        assert_eq!(CheckRecord::within("a", "x", 2.04, 2.0, 0.05).status, Status::Pass);
        assert_eq!(CheckRecord::within("a", "x", 1.94, 2.0, 0.05).status, Status::Fail);
        assert_eq!(CheckRecord::equal("a", "x", 3.0, 3.0).status, Status::Pass);
        assert_eq!(CheckRecord::info("a", "x", 7.0).status, Status::Info);
    }

    #[test]
    fn report_passes_iff_no_failure_and_timing_is_separable() {
        let mut r = Report::new(&ExperimentConfig::default());
        r.push(CheckRecord::info("i", "x", 1.0));
        r.push(CheckRecord::at_most("p", "x", 0.0, 1.0));
        assert!(r.passed());
        let a = r.deterministic_json();
        r.timing.total_seconds = 12.5;
        assert_eq!(a, r.deterministic_json());
        assert!(!a.contains("total_seconds"));
        r.push(CheckRecord::at_most("f", "x", 2.0, 1.0));
        assert!(!r.passed());
        assert_eq!(r.counts(), (1, 1, 1));
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn display_line() {
        let s = CheckRecord::within("growth/rotation", "x", 2.0, 2.0, 0.05).to_string();
        assert!(s.starts_with("PASS growth/rotation"), "{s}");
    }
}
