//! Run reports.

use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};

pub const SCHEMA_VERSION: u32 = 1;

/// How a check compares `measured` with `reference`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|measured − reference| ≤ tolerance`.
    Within,
    /// `measured − reference > tolerance`.
    Above,
    /// `measured + tolerance < reference`.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub relation: Relation,
    pub measured: f64,
    pub reference: f64,
    /// Standard error of `measured`; 0 for deterministic quantities.
    pub stderr: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, relation: Relation, measured: f64, reference: f64, stderr: f64, tolerance: f64) -> Self {
        let passed = match relation {
            Relation::Within => (measured - reference).abs() <= tolerance,
            Relation::Above => measured - reference > tolerance,
            Relation::Below => measured + tolerance < reference,
        };
        Self {
            name: name.into(),
            relation,
            measured,
            reference,
            stderr,
            tolerance,
            passed,
        }
    }

    /// Statistical agreement within `sigmas` standard errors.
    pub fn within_sigma(name: impl Into<String>, measured: f64, reference: f64, stderr: f64, sigmas: f64) -> Self {
        Self::new(name, Relation::Within, measured, reference, stderr, sigmas * stderr)
    }

    /// Deterministic agreement within an absolute tolerance.
    pub fn within(name: impl Into<String>, measured: f64, reference: f64, tolerance: f64) -> Self {
        Self::new(name, Relation::Within, measured, reference, 0.0, tolerance)
    }

    pub fn line(&self) -> String {
        let op = match self.relation {
            Relation::Within => "~",
            Relation::Above => ">",
            Relation::Below => "<",
        };
        format!(
            "{} {}: {:.6e} {op} {:.6e} (stderr {:.2e}, tol {:.2e})",
            if self.passed { "ok  " } else { "FAIL" },
            self.name,
            self.measured,
            self.reference,
            self.stderr,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesInfo {
    pub name: String,
    pub csv: String,
    pub svg: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// Contents of `report.json`. Timings go to `timings.json` so that the
/// report is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kind: Kind,
    pub passed: bool,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub series: Vec<SeriesInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub schema_version: u32,
    pub workers: usize,
    pub total_seconds: f64,
    pub stages: Vec<Stage>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Check::within_sigma("a", 1.0, 1.2, 0.1, 3.0).passed);
        assert!(!Check::within_sigma("a", 1.0, 1.4, 0.1, 3.0).passed);
        assert!(Check::new("b", Relation::Above, 0.5, 0.0, 0.1, 0.3).passed);
        assert!(!Check::new("b", Relation::Above, 0.2, 0.0, 0.1, 0.3).passed);
        assert!(Check::new("c", Relation::Below, 0.04, 0.05, 0.0, 0.0).passed);
        assert!(!Check::within("d", f64::NAN, 0.0, 1.0).passed);
    }
}
