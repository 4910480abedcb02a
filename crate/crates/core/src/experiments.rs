//! Inference validation and simulated comparison experiments, with JSON and
//! markdown reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{rollout, train_fixed, AgentError, AgentHyper};
use crate::datahub::DataWindow;
use crate::derive_seed;
use crate::dwpi::{infer, DwpiError, DwpiModel};
use crate::env::{EnvConfig, PreferenceWeights, RewardVector};
use crate::scenarios::{demo_features, run_schedule, Scenario, ScenarioError, Schedule};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Minimum gap between the dominant and the other weight for the extreme
/// scenarios.
pub const EXTREME_MARGIN: f64 = 0.2;
/// Allowed amount by which the cost-saving agent may trail its user.
pub const SAVE_COST_SLACK: f64 = 0.5;
pub const EVAL_DAYS: usize = 7;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("inference model missing: {0}")]
    ModelMissing(String),
    #[error("window mismatch: {0}")]
    WindowMismatch(String),
    #[error("unknown report format `{0}` (expected json or markdown)")]
    UnknownFormat(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dwpi(#[from] DwpiError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub schedule: Schedule,
    pub features: RewardVector,
    pub inferred: PreferenceWeights,
}

impl ValidationRow {
    /// `w_comf - w_cost`.
    pub fn comfort_lead(&self) -> f64 {
        self.inferred.w_comf() - self.inferred.w_cost()
    }
}

/// Qualitative checks over the three built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationChecks {
    /// Comfort weight leads by at least the margin for the comfort user.
    pub max_comfort_margin: bool,
    /// Cost weight leads by at least the margin for the cost-saving user.
    pub save_cost_margin: bool,
    /// The mixture's weight gap is smaller than both extremes' gaps.
    pub mixture_balanced: bool,
    /// Comfort weight strictly decreases comfort -> mixture -> cost.
    pub comfort_ordering: bool,
}

impl ValidationChecks {
    pub fn all(&self) -> bool {
        self.max_comfort_margin && self.save_cost_margin && self.mixture_balanced && self.comfort_ordering
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub rows: Vec<ValidationRow>,
    /// Present when all three built-in scenarios are in `rows`.
    pub checks: Option<ValidationChecks>,
}

impl ValidationReport {
    pub fn row(&self, scenario: Scenario) -> Option<&ValidationRow> {
        self.rows.iter().find(|r| r.schedule.name == scenario.name())
    }

    /// `(scenario, inferred weights)` for the built-in rows.
    pub fn inferred_weights(&self) -> Vec<(Scenario, PreferenceWeights)> {
        Scenario::ALL
            .iter()
            .filter_map(|&sc| self.row(sc).map(|r| (sc, r.inferred)))
            .collect()
    }
}

/// Infers preferences for the built-in scenarios plus any extra schedules.
pub fn run_validation(
    model: &DwpiModel,
    train_window: &DataWindow,
    config: &EnvConfig,
    extra: &[Schedule],
) -> Result<ValidationReport, ExperimentError> {
    if train_window.days != 1 {
        return Err(ExperimentError::WindowMismatch(format!(
            "validation runs on the one-day training window, got {} days",
            train_window.days
        )));
    }
    let schedules = Scenario::ALL
        .iter()
        .map(|&sc| crate::scenarios::scenario_schedule(sc))
        .chain(extra.iter().cloned());
    let mut rows = Vec::new();
    for schedule in schedules {
        let features = demo_features(&schedule, train_window, config)?;
        let inferred = infer(model, features)?;
        rows.push(ValidationRow {
            schedule,
            features,
            inferred,
        });
    }
    let mut report = ValidationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
        checks: None,
    };
    report.checks = validation_checks(&report);
    Ok(report)
}

pub fn validation_checks(report: &ValidationReport) -> Option<ValidationChecks> {
    let comfort = report.row(Scenario::AlwaysMaxComfort)?;
    let save = report.row(Scenario::AlwaysSaveCost)?;
    let mixture = report.row(Scenario::Mixture)?;
    let comfort_gap = comfort.comfort_lead();
    let save_gap = -save.comfort_lead();
    let mixture_gap = mixture.comfort_lead().abs();
    Some(ValidationChecks {
        max_comfort_margin: comfort_gap >= EXTREME_MARGIN,
        save_cost_margin: save_gap >= EXTREME_MARGIN,
        mixture_balanced: mixture_gap < comfort_gap.abs() && mixture_gap < save_gap.abs(),
        comfort_ordering: comfort.inferred.w_comf() > mixture.inferred.w_comf()
            && mixture.inferred.w_comf() > save.inferred.w_comf(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub schedule: Schedule,
    pub weights: PreferenceWeights,
    pub user: RewardVector,
    pub agent: RewardVector,
    /// `|agent - user|` per axis.
    pub deviation: RewardVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonChecks {
    /// Agent comfort never rises from comfort user to cost user.
    pub agent_comfort_non_increasing: bool,
    /// Agent cost reward never falls from comfort user to cost user.
    pub agent_cost_non_decreasing: bool,
    /// Cost-saving agent's cost reward is at least the user's minus the slack.
    pub save_cost_agent_competitive: bool,
}

impl ComparisonChecks {
    pub fn all(&self) -> bool {
        self.agent_comfort_non_increasing && self.agent_cost_non_decreasing && self.save_cost_agent_competitive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub eval_days: usize,
    pub rows: Vec<ComparisonRow>,
    pub checks: Option<ComparisonChecks>,
}

impl ComparisonReport {
    pub fn row(&self, scenario: Scenario) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.schedule.name == scenario.name())
    }
}

/// Trains one fixed-weight agent per schedule on the training day, deploys it
/// greedily over the evaluation window and compares it with the user.
pub fn run_comparison(
    inferred: &[(Schedule, PreferenceWeights)],
    train_window: &DataWindow,
    eval_window: &DataWindow,
    config: &EnvConfig,
    hyper: &AgentHyper,
    seed: u64,
) -> Result<ComparisonReport, ExperimentError> {
    if eval_window.days != EVAL_DAYS {
        return Err(ExperimentError::WindowMismatch(format!(
            "evaluation window must cover {EVAL_DAYS} days, got {}",
            eval_window.days
        )));
    }
    if train_window.days != 1 {
        return Err(ExperimentError::WindowMismatch(format!(
            "training window must cover 1 day, got {}",
            train_window.days
        )));
    }
    let mut rows = Vec::with_capacity(inferred.len());
    for (i, (schedule, weights)) in inferred.iter().enumerate() {
        let agent = train_fixed(train_window, config, hyper, *weights, derive_seed(seed, i as u64))?;
        let agent_result = rollout(&agent, *weights, eval_window, config, true, 0)?.reward;
        let user = run_schedule(schedule, eval_window, config)?;
        rows.push(ComparisonRow {
            schedule: schedule.clone(),
            weights: *weights,
            user,
            agent: agent_result,
            deviation: RewardVector::new(
                (agent_result.cost - user.cost).abs(),
                (agent_result.comfort - user.comfort).abs(),
            ),
        });
    }
    let mut report = ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        eval_days: eval_window.days,
        rows,
        checks: None,
    };
    report.checks = comparison_checks(&report);
    Ok(report)
}

pub fn comparison_checks(report: &ComparisonReport) -> Option<ComparisonChecks> {
    let ordered: Vec<&ComparisonRow> = Scenario::ALL
        .iter()
        .map(|&sc| report.row(sc))
        .collect::<Option<_>>()?;
    let save = report.row(Scenario::AlwaysSaveCost)?;
    Some(ComparisonChecks {
        agent_comfort_non_increasing: ordered.windows(2).all(|p| p[0].agent.comfort >= p[1].agent.comfort),
        agent_cost_non_decreasing: ordered.windows(2).all(|p| p[0].agent.cost <= p[1].agent.cost),
        save_cost_agent_competitive: save.agent.cost >= save.user.cost - SAVE_COST_SLACK,
    })
}

/// Both experiments together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub schema_version: u32,
    pub seed: u64,
    pub validation: ValidationReport,
    pub comparison: Option<ComparisonReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(ExperimentError::UnknownFormat(other.to_owned())),
        }
    }
}

/// Something that renders as a JSON document or a markdown table.
pub trait Report: Serialize {
    fn to_markdown(&self) -> String;

    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Markdown => self.to_markdown(),
        }
    }
}

/// Writes `report` to `path`; the format is checked before touching the file.
pub fn emit_report<R: Report>(report: &R, format: &str, path: &Path) -> Result<(), ExperimentError> {
    let format: ReportFormat = format.parse()?;
    fs::write(path, report.render(format))?;
    Ok(())
}

fn describe_hours(hours: &[u32]) -> String {
    let mut spans: Vec<(u32, u32)> = Vec::new();
    for &h in hours {
        match spans.last_mut() {
            Some((_, end)) if *end == h => *end = h + 1,
            _ => spans.push((h, h + 1)),
        }
    }
    spans
        .iter()
        .map(|(a, b)| format!("{a:02}:00-{b:02}:00"))
        .collect::<Vec<_>>()
        .join(" & ")
}

fn pair(a: f64, b: f64, decimals: usize) -> String {
    format!("[{a:.decimals$}, {b:.decimals$}]")
}

fn check_mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

impl Report for ValidationReport {
    fn to_markdown(&self) -> String {
        let mut out = String::from("## Inference validation\n\n");
        out.push_str("| Scenario | Demonstration - running at | Cumulative [cost, comfort] | [w_cost, w_comf] |\n");
        out.push_str("|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.schedule.name,
                describe_hours(&r.schedule.run_hours),
                pair(r.features.cost, r.features.comfort, 4),
                pair(r.inferred.w_cost(), r.inferred.w_comf(), 2),
            );
        }
        if let Some(c) = &self.checks {
            out.push('\n');
            let _ = writeln!(out, "- comfort margin >= {EXTREME_MARGIN}: {}", check_mark(c.max_comfort_margin));
            let _ = writeln!(out, "- cost margin >= {EXTREME_MARGIN}: {}", check_mark(c.save_cost_margin));
            let _ = writeln!(out, "- mixture most balanced: {}", check_mark(c.mixture_balanced));
            let _ = writeln!(out, "- comfort weight ordering: {}", check_mark(c.comfort_ordering));
        }
        out
    }
}

impl Report for ComparisonReport {
    fn to_markdown(&self) -> String {
        let mut out = format!("## Simulated comparison ({} days)\n\n", self.eval_days);
        out.push_str("| Scenario | Weights [w_cost, w_comf] | User [cost, comfort] | Agent [cost, comfort] | Deviation |\n");
        out.push_str("|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.schedule.name,
                pair(r.weights.w_cost(), r.weights.w_comf(), 2),
                pair(r.user.cost, r.user.comfort, 2),
                pair(r.agent.cost, r.agent.comfort, 2),
                pair(r.deviation.cost, r.deviation.comfort, 2),
            );
        }
        if let Some(c) = &self.checks {
            out.push('\n');
            let _ = writeln!(out, "- agent comfort non-increasing: {}", check_mark(c.agent_comfort_non_increasing));
            let _ = writeln!(out, "- agent cost non-decreasing: {}", check_mark(c.agent_cost_non_decreasing));
            let _ = writeln!(
                out,
                "- cost-saving agent within {SAVE_COST_SLACK} of user: {}",
                check_mark(c.save_cost_agent_competitive)
            );
        }
        out
    }
}

impl Report for FullReport {
    fn to_markdown(&self) -> String {
        let mut out = format!("# Preference inference report (seed {})\n\n", self.seed);
        out.push_str(&self.validation.to_markdown());
        if let Some(c) = &self.comparison {
            out.push('\n');
            out.push_str(&c.to_markdown());
        }
        out
    }
}
