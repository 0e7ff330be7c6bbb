//! Report types shared by suites and experiments. Every field that may be
//! undefined is an `Option`, so serialized reports never contain NaN.

use std::fmt::Write as _;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
}

/// One named pass/fail comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub tolerance: Option<f64>,
    pub passed: bool,
    pub note: String,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl Check {
    /// Passes when `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value: finite(value),
            reference: None,
            tolerance: finite(limit),
            passed: value <= limit,
            note: note.into(),
        }
    }

    /// Passes when `|value - reference| <= tolerance`.
    pub fn close(name: &str, value: f64, reference: f64, tolerance: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value: finite(value),
            reference: finite(reference),
            tolerance: finite(tolerance),
            passed: (value - reference).abs() <= tolerance,
            note: note.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, value: Option<f64>, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value: value.and_then(finite),
            reference: None,
            tolerance: None,
            passed,
            note: note.into(),
        }
    }
}

/// Goodness-of-fit style report: a list of checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofReport {
    pub name: String,
    pub parameters: Vec<Parameter>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl GofReport {
    pub fn new(name: &str, parameters: Vec<Parameter>, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        GofReport { name: name.into(), parameters, checks, passed }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Monte-Carlo estimate of a squared difference at one depth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthEstimate {
    pub depth: usize,
    pub mean: f64,
    pub se: f64,
}

/// Mean squared difference at vertices at a given distance from the center.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceEstimate {
    pub distance: usize,
    pub vertices: usize,
    pub mean: f64,
    pub se: f64,
}

/// Fitted geometric ratio with a batch-means confidence band.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioFit {
    pub point: f64,
    pub batch_se: Option<f64>,
    pub upper_95: Option<f64>,
    /// Batches whose fit was undefined (a zero estimate).
    pub undefined_batches: usize,
}

/// Decay of a squared difference with depth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub name: String,
    pub parameters: Vec<Parameter>,
    pub observable: String,
    pub estimates: Vec<DepthEstimate>,
    pub by_distance: Vec<DistanceEstimate>,
    pub ratio: Option<RatioFit>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Any report the harness produces.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Gof(GofReport),
    Decay(DecayReport),
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

impl Report {
    pub fn name(&self) -> &str {
        match self {
            Report::Gof(r) => &r.name,
            Report::Decay(r) => &r.name,
        }
    }

    pub fn passed(&self) -> bool {
        match self {
            Report::Gof(r) => r.passed,
            Report::Decay(r) => r.passed,
        }
    }

    pub fn checks(&self) -> &[Check] {
        match self {
            Report::Gof(r) => &r.checks,
            Report::Decay(r) => &r.checks,
        }
    }

    /// Aligned text table for humans.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} [{}]", self.name(), if self.passed() { "PASS" } else { "FAIL" });
        if let Report::Decay(d) = self {
            let _ = writeln!(s, "  {:>5}  {:>14}  {:>14}", "depth", "mean", "se");
            for e in &d.estimates {
                let _ = writeln!(s, "  {:>5}  {:>14.6e}  {:>14.6e}", e.depth, e.mean, e.se);
            }
        }
        let width = self.checks().iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in self.checks() {
            let _ = writeln!(
                s,
                "  {:<4}  {:<width$}  value={}  ref={}  tol={}  {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                opt(c.value),
                opt(c.reference),
                opt(c.tolerance),
                c.note
            );
        }
        s
    }

    /// Summary CSV with header `check,value,reference,tolerance,passed`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,value,reference,tolerance,passed\n");
        let cell = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v}"));
        for c in self.checks() {
            let _ =
                writeln!(s, "{},{},{},{},{}", c.name, cell(c.value), cell(c.reference), cell(c.tolerance), c.passed);
        }
        s
    }
}

pub(crate) fn params(pairs: &[(&str, f64)]) -> Vec<Parameter> {
    pairs.iter().map(|(n, v)| Parameter { name: (*n).into(), value: *v }).collect()
}
