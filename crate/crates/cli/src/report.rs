//! Machine-readable run reports and the `run-all` summary table.

use std::fmt::{self, Write as _};

use invset::integrate::{DriftReport, IntegratorStats};
use invset::invariance::{SampleRecord, Verdict};
use serde::Serialize;

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    Borderline,
    HypothesisError,
    ConfigError,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail | Outcome::Borderline | Outcome::HypothesisError => 1,
            Outcome::ConfigError => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Borderline => "borderline",
            Outcome::HypothesisError => "hypothesis-error",
            Outcome::ConfigError => "config-error",
        }
    }
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Outcome::Pass,
            Verdict::Fail => Outcome::Fail,
            Verdict::Borderline => Outcome::Borderline,
            Verdict::HypothesisError => Outcome::HypothesisError,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: Option<ScenarioConfig>,
    pub verdict: Outcome,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
    pub elapsed_seconds: f64,
}

impl RunReport {
    pub fn new(config: Option<ScenarioConfig>, verdict: Outcome, message: Option<String>, evidence: Option<Evidence>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            verdict,
            exit_code: verdict.exit_code(),
            message,
            evidence,
            elapsed_seconds: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Evidence {
    Invariance(InvarianceEvidence),
    Coincidence(CoincidenceEvidence),
    Oracle(OracleEvidence),
    Drift(DriftEvidence),
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub t: f64,
    pub residual: f64,
    pub inside: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub singular_values: Vec<f64>,
}

impl From<&SampleRecord> for Sample {
    fn from(s: &SampleRecord) -> Self {
        Self {
            t: s.t,
            residual: s.residual,
            inside: s.inside,
            rank: s.rank,
            margin: s.margin,
            singular_values: s.singular_values.clone(),
        }
    }
}

/// Number of samples at each numerical rank.
#[derive(Debug, Clone, Serialize)]
pub struct RankCount {
    pub rank: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftRow {
    pub quantity: String,
    pub max_drift: f64,
    pub time_of_max: f64,
}

pub fn drift_table(d: &DriftReport) -> Vec<DriftRow> {
    d.labels
        .iter()
        .zip(&d.max_drift)
        .zip(&d.time_of_max)
        .map(|((l, &m), &t)| DriftRow {
            quantity: l.clone(),
            max_drift: m,
            time_of_max: t,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Integration {
    pub method: String,
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub samples: usize,
}

impl Integration {
    pub fn of(stats: &IntegratorStats, samples: usize) -> Self {
        Self {
            method: stats.method.to_string(),
            steps: stats.steps,
            rejected: stats.rejected,
            evaluations: stats.evaluations,
            samples,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceEvidence {
    pub kind: String,
    pub equilibrium: bool,
    pub initial: Sample,
    pub worst: Sample,
    pub max_residual: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rank_profile: Vec<RankCount>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_conservation_residual: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<DriftRow>,
    pub integration: Integration,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationPoint {
    pub t: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoincidenceEvidence {
    pub e_residual: f64,
    pub order: usize,
    pub difference_conservation_residual: f64,
    pub max_deviation: f64,
    pub time_of_max: f64,
    pub tolerance: f64,
    /// The deviation curve at evenly spaced samples.
    pub deviation_curve: Vec<DeviationPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integration_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub quantity: String,
    pub worst_relative_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEvidence {
    pub probes: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<OracleRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftEvidence {
    pub tolerance: f64,
    pub worst: f64,
    pub rows: Vec<DriftRow>,
    pub integration: Integration,
}

/// One line of the `run-all` table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub file: String,
    pub check: String,
    pub verdict: Outcome,
    pub expected: String,
    pub seconds: f64,
}

impl SummaryRow {
    pub fn as_expected(&self) -> bool {
        self.verdict.name() == self.expected
    }
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let w = rows.iter().map(|r| r.file.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w$}  {:<20}  {:<16}  {:<16}  {:>8}  ok", "scenario", "check", "verdict", "expected", "seconds");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$}  {:<20}  {:<16}  {:<16}  {:>8.2}  {}",
            r.file,
            r.check,
            r.verdict.name(),
            r.expected,
            r.seconds,
            if r.as_expected() { "yes" } else { "NO" }
        );
    }
    let matched = rows.iter().filter(|r| r.as_expected()).count();
    let _ = writeln!(out, "{matched}/{} scenarios as expected", rows.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome::Pass.exit_code(), 0);
        for o in [Outcome::Fail, Outcome::Borderline, Outcome::HypothesisError] {
            assert_eq!(o.exit_code(), 1);
        }
        assert_eq!(Outcome::ConfigError.exit_code(), 2);
    }

    #[test]
    fn verdict_names_round_trip_through_json() {
        for o in [Outcome::Pass, Outcome::Fail, Outcome::Borderline, Outcome::HypothesisError, Outcome::ConfigError] {
            assert_eq!(serde_json::to_value(o).unwrap(), o.name());
        }
    }

    #[test]
    fn report_json_carries_verdict_and_code() {
        let r = RunReport::new(None, Outcome::ConfigError, Some("bad".into()), None);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["verdict"], "config-error");
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["message"], "bad");
    }

    #[test]
    fn summary_marks_unexpected_rows() {
        let rows = [
            SummaryRow {
                file: "a.json".into(),
                check: "drift".into(),
                verdict: Outcome::Pass,
                expected: "pass".into(),
                seconds: 0.1,
            },
            SummaryRow {
                file: "b.json".into(),
                check: "coincidence".into(),
                verdict: Outcome::Fail,
                expected: "hypothesis-error".into(),
                seconds: 0.2,
            },
        ];
        let t = summary_table(&rows);
        assert!(t.contains("NO"));
        assert!(t.ends_with("1/2 scenarios as expected\n"));
    }
}
