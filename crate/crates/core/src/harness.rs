//! Scenario runner, golden comparison, suite summary and the REPL.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::context::{LineKind, Transcript};
use crate::grammar::{render_action, PolicyAction};
use crate::planner::{PlannerOutcome, PlannerStatus, SkillLogEntry, TaskPlanner};
use crate::policy::{Policy, ScriptedPolicy};
use crate::scenario::{ExpectedAction, Scenario, ScenarioError};
use crate::world::WorldState;

pub const SUITE_CATEGORIES: [&str; 3] = ["simple", "moderate", "complex"];

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Failure,
    InputError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::InputError => 2,
        }
    }
}

/// An executed perception or skill action and whether it failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutedAction {
    pub action: String,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldenComparison {
    pub matched: bool,
    /// 1-based index of the first differing action.
    pub divergence_index: Option<usize>,
    pub expected_len: usize,
    pub actual_len: usize,
}

/// Compares on action text and, for entries that pin it, the failure flag.
pub fn compare_actions(expected: &[ExpectedAction], actual: &[ExecutedAction]) -> GoldenComparison {
    let differs = |e: &ExpectedAction, a: &ExecutedAction| {
        let fails_pinned = matches!(e, ExpectedAction::Detailed { .. });
        e.action() != a.action || (fails_pinned && e.fails() != a.failed)
    };
    let divergence = expected
        .iter()
        .zip(actual)
        .position(|(e, a)| differs(e, a))
        .or_else(|| (expected.len() != actual.len()).then(|| expected.len().min(actual.len())))
        .map(|i| i + 1);
    GoldenComparison {
        matched: divergence.is_none(),
        divergence_index: divergence,
        expected_len: expected.len(),
        actual_len: actual.len(),
    }
}

/// Pairs each executed action with its failure flag from the skill log.
pub fn executed_actions(outcome: &PlannerOutcome) -> Vec<ExecutedAction> {
    let mut skills = outcome.skill_log.iter();
    outcome
        .actions
        .iter()
        .map(|a| ExecutedAction {
            action: render_action(a),
            failed: match a {
                PolicyAction::Skill(_) => skills.next().is_some_and(|s| s.error_code.is_some()),
                _ => false,
            },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TranscriptRecord {
    pub kind: String,
    pub text: String,
}

fn transcript_records(t: &Transcript) -> Vec<TranscriptRecord> {
    t.lines
        .iter()
        .map(|l| TranscriptRecord {
            kind: match l.kind {
                LineKind::Entry(kind) => serde_json::to_value(kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                LineKind::CommandFeedback => "command_feedback".to_string(),
            },
            text: l.text.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub category: Option<String>,
    pub seed: u64,
    pub budget: u32,
    pub status: PlannerStatus,
    pub steps_used: u32,
    pub actions: Vec<ExecutedAction>,
    pub golden: Option<GoldenComparison>,
    pub exit_code: i32,
    pub skill_log: Vec<SkillLogEntry>,
    pub transcript: Vec<TranscriptRecord>,
    pub final_world: WorldState,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: PlannerOutcome,
    pub log: String,
    pub report: RunReport,
    pub exit: ExitStatus,
}

fn status_line(status: &PlannerStatus) -> String {
    match status {
        PlannerStatus::Success { answer } => format!("success: {answer}"),
        PlannerStatus::Failure { code, reason } => format!("failure {code}: {reason}"),
        PlannerStatus::BudgetExhausted => "budget exhausted".to_string(),
    }
}

/// Line-oriented transcript log. Contains nothing time- or host-dependent.
pub fn render_log(scenario: &Scenario, seed: u64, budget: u32, outcome: &PlannerOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# scenario: {}", scenario.name);
    let _ = writeln!(out, "# seed: {seed}");
    let _ = writeln!(out, "# budget: {budget}");
    out.push_str(&outcome.transcript.to_log());
    let _ = writeln!(out, "# status: {}", status_line(&outcome.status));
    let _ = writeln!(out, "# steps used: {}", outcome.steps_used);
    out
}

/// Runs a loaded scenario with the given policy.
pub fn run_with_policy(
    scenario: &Scenario,
    planner: &TaskPlanner,
    policy: &mut dyn Policy,
    seed: u64,
) -> RunResult {
    let outcome = planner.run(&scenario.request, scenario.initial_world(), policy);
    let actions = executed_actions(&outcome);
    let golden = scenario
        .expected_actions
        .as_ref()
        .map(|expected| compare_actions(expected, &actions));
    let exit = if !outcome.status.is_success() || golden.as_ref().is_some_and(|g| !g.matched) {
        ExitStatus::Failure
    } else {
        ExitStatus::Success
    };
    let log = render_log(scenario, seed, planner.budget, &outcome);
    let report = RunReport {
        scenario: scenario.name.clone(),
        category: scenario.category.clone(),
        seed,
        budget: planner.budget,
        status: outcome.status.clone(),
        steps_used: outcome.steps_used,
        actions,
        golden,
        exit_code: exit.code(),
        skill_log: outcome.skill_log.clone(),
        transcript: transcript_records(&outcome.transcript),
        final_world: outcome.world.clone(),
    };
    RunResult {
        outcome,
        log,
        report,
        exit,
    }
}

/// Runs a scenario with its own script. A missing script is an input error.
pub fn run_scripted(
    scenario: &Scenario,
    planner: &TaskPlanner,
) -> Result<RunResult, ScenarioError> {
    let script = scenario
        .policy_script
        .clone()
        .ok_or_else(|| ScenarioError::Parse {
            path: scenario.name.clone(),
            message: "scenario has no policy_script".into(),
        })?;
    let mut policy = ScriptedPolicy::new(script);
    Ok(run_with_policy(
        scenario,
        planner,
        &mut policy,
        scenario.seed,
    ))
}

/// Runs the scenario at `path` with its script and the scenario's budget.
pub fn run_scenario(path: &Path, planner: &TaskPlanner) -> Result<RunResult, ScenarioError> {
    let scenario = Scenario::load(path)?;
    let planner = TaskPlanner {
        explainer: planner.explainer.clone(),
        methods: planner.methods.clone(),
        budget: scenario.budget,
    };
    run_scripted(&scenario, &planner)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub path: PathBuf,
    pub scenario: Option<String>,
    pub category: String,
    pub success: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub attempts: usize,
    pub successes: usize,
}

impl CategoryRow {
    pub fn success_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            100.0 * self.successes as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub entries: Vec<SuiteEntry>,
    pub rows: Vec<CategoryRow>,
}

impl SuiteSummary {
    pub fn row(&self, category: &str) -> Option<&CategoryRow> {
        self.rows.iter().find(|r| r.category == category)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("| Request type | Number of attempts | Success rate |\n");
        out.push_str("|---|---|---|\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {:.0}% |",
                row.category,
                row.attempts,
                row.success_rate()
            );
        }
        out
    }
}

fn category_rank(category: &str) -> (usize, String) {
    let rank = SUITE_CATEGORIES
        .iter()
        .position(|c| *c == category)
        .unwrap_or(SUITE_CATEGORIES.len());
    (rank, category.to_string())
}

/// Runs every `*.json` scenario in `dir` in parallel and groups the results
/// by category. A scenario succeeds when it exits with status 0.
pub fn run_suite(dir: &Path, planner: &TaskPlanner) -> std::io::Result<SuiteSummary> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();

    let entries: Vec<SuiteEntry> = paths
        .par_iter()
        .map(|path| match Scenario::load(path) {
            Err(e) => SuiteEntry {
                path: path.clone(),
                scenario: None,
                category: "uncategorized".into(),
                success: false,
                error: Some(e.to_string()),
            },
            Ok(scenario) => {
                let planner = TaskPlanner {
                    explainer: planner.explainer.clone(),
                    methods: planner.methods.clone(),
                    budget: scenario.budget,
                };
                let category = scenario
                    .category
                    .clone()
                    .unwrap_or_else(|| "uncategorized".into());
                match run_scripted(&scenario, &planner) {
                    Ok(r) => SuiteEntry {
                        path: path.clone(),
                        scenario: Some(scenario.name.clone()),
                        category,
                        success: r.exit == ExitStatus::Success,
                        error: (r.exit != ExitStatus::Success)
                            .then(|| status_line(&r.outcome.status)),
                    },
                    Err(e) => SuiteEntry {
                        path: path.clone(),
                        scenario: Some(scenario.name.clone()),
                        category,
                        success: false,
                        error: Some(e.to_string()),
                    },
                }
            }
        })
        .collect();

    let mut grouped: BTreeMap<(usize, String), CategoryRow> = BTreeMap::new();
    for e in &entries {
        let row = grouped
            .entry(category_rank(&e.category))
            .or_insert_with(|| CategoryRow {
                category: e.category.clone(),
                attempts: 0,
                successes: 0,
            });
        row.attempts += 1;
        row.successes += usize::from(e.success);
    }
    Ok(SuiteSummary {
        entries,
        rows: grouped.into_values().collect(),
    })
}

/// Reads one request per line and runs it against the persistent world.
/// `:quit` or end of input ends the session.
pub fn repl(
    mut world: WorldState,
    planner: &TaskPlanner,
    make_policy: &mut dyn FnMut() -> Result<Box<dyn Policy>, String>,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> std::io::Result<()> {
    let mut line = String::new();
    loop {
        write!(output, "> ")?;
        output.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let request = line.trim();
        if request.is_empty() {
            continue;
        }
        if request == ":quit" {
            break;
        }
        let mut policy = match make_policy() {
            Ok(p) => p,
            Err(e) => {
                writeln!(output, "error: {e}")?;
                continue;
            }
        };
        let outcome = planner.run(request, world.clone(), policy.as_mut());
        write!(output, "{}", outcome.transcript.to_log())?;
        writeln!(output, "# status: {}", status_line(&outcome.status))?;
        world = outcome.world;
    }
    Ok(())
}
