//! The reason-and-act loop over thoughts, perception queries and skills.
//!
//! Each iteration asks the policy for one action and appends at least one
//! entry to the context. Skills go through the precondition gate, the HTN
//! decomposition and the executor; failures are routed through the explainer.

use serde::{Deserialize, Serialize};

use crate::context::{update_context, Context, ContextEntry, EntryKind, Transcript};
use crate::execution::{execute_skill, FailureMessage};
use crate::explainer::Explainer;
use crate::grammar::{render_action, PolicyAction, SkillCall, SkillName};
use crate::perception::{perceive, robot_state_summary, SemanticMap};
use crate::policy::Policy;
use crate::skills::{check_preconditions, extract_target_node, MethodTable, PrecondResult};
use crate::world::{CommandFeedback, ErrorCode, Trigger, WorldState};

pub const DEFAULT_BUDGET: u32 = 40;
pub const FINISH_OBSERVATION: &str = "The task is complete.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerStatus {
    Success { answer: String },
    Failure { code: String, reason: String },
    BudgetExhausted,
}

impl PlannerStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, PlannerStatus::Success { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillLogEntry {
    /// 1-based count of skills dispatched so far.
    pub index: u32,
    pub call: String,
    pub error_code: Option<ErrorCode>,
    pub commands_executed: usize,
    pub suggestion: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutcome {
    pub status: PlannerStatus,
    pub steps_used: u32,
    pub transcript: Transcript,
    pub context: Context,
    pub world: WorldState,
    /// Perception and skill actions in dispatch order.
    pub actions: Vec<PolicyAction>,
    pub skill_log: Vec<SkillLogEntry>,
    /// Context length after each iteration.
    pub context_lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TaskPlanner {
    pub explainer: Explainer,
    pub methods: MethodTable,
    pub budget: u32,
}

impl Default for TaskPlanner {
    fn default() -> Self {
        Self {
            explainer: Explainer::default(),
            methods: MethodTable::builtin(),
            budget: DEFAULT_BUDGET,
        }
    }
}

struct SkillReport {
    observation: String,
    log: SkillLogEntry,
    feedback: Vec<String>,
}

fn feedback_line(cmd: &crate::world::Command, fb: &CommandFeedback) -> String {
    match fb {
        CommandFeedback::Success => format!("{cmd} -> SUCCESS"),
        CommandFeedback::Failure {
            error_code,
            message,
        } => format!("{cmd} -> {}: {message}", error_code.as_str()),
    }
}

fn success_observation(call: &SkillCall, surface: &str) -> String {
    match call.name {
        SkillName::Goto => format!("The robot arrived at the {}.", call.target()),
        SkillName::Pick => format!("The robot successfully picks up the {}.", call.target()),
        SkillName::Place => format!("The robot put the {} down on the {surface}.", call.target()),
    }
}

impl TaskPlanner {
    pub fn with_budget(mut self, budget: u32) -> Self {
        self.budget = budget;
        self
    }

    /// Runs the loop until the policy finishes, fails, or the budget runs out.
    pub fn run(
        &self,
        request: &str,
        mut world: WorldState,
        policy: &mut dyn Policy,
    ) -> PlannerOutcome {
        let budget = self.budget.max(1);
        let mut map = SemanticMap::build(&world);
        let mut ctx = Context::new(request, &robot_state_summary(&world));
        let mut transcript = Transcript::default();
        ctx.entries.iter().for_each(|e| transcript.push_entry(e));

        let mut actions = Vec::new();
        let mut skill_log = Vec::new();
        let mut context_lengths = Vec::new();
        let mut skill_index = 0u32;
        let mut steps_used = 0u32;

        let push = |ctx: &mut Context, transcript: &mut Transcript, kind, text: String| {
            let entry = ContextEntry::new(kind, text);
            transcript.push_entry(&entry);
            *ctx = update_context(ctx, entry);
        };

        let status = loop {
            if steps_used >= budget {
                break PlannerStatus::BudgetExhausted;
            }
            let action = match policy.decide(&ctx) {
                Ok(a) => a,
                Err(e) => {
                    break PlannerStatus::Failure {
                        code: e.code().to_string(),
                        reason: e.to_string(),
                    }
                }
            };
            steps_used += 1;
            ctx.step = steps_used;
            log::debug!("step {steps_used}: {action}");
            match &action {
                PolicyAction::Thought(text) => {
                    push(&mut ctx, &mut transcript, EntryKind::Thought, text.clone());
                }
                PolicyAction::Perception(call) => {
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::ActionTaken,
                        render_action(&action),
                    );
                    let (snapshot, observation) = perceive(call, &world);
                    map = snapshot;
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::Observation,
                        observation,
                    );
                    actions.push(action.clone());
                }
                PolicyAction::Skill(call) => {
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::ActionTaken,
                        render_action(&action),
                    );
                    skill_index += 1;
                    let report = self.run_skill(skill_index, call, request, &mut world, &map);
                    report
                        .feedback
                        .iter()
                        .for_each(|f| transcript.push_feedback(f.clone()));
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::Observation,
                        report.observation,
                    );
                    skill_log.push(report.log);
                    actions.push(action.clone());
                    for fired in world.fire_events(Trigger::AfterSkillIndex(skill_index)) {
                        log::debug!(
                            "event after skill {skill_index}: {:?} applied={}",
                            fired.mutation,
                            fired.applied
                        );
                    }
                }
                PolicyAction::Finish(answer) => {
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::ActionTaken,
                        render_action(&action),
                    );
                    push(
                        &mut ctx,
                        &mut transcript,
                        EntryKind::Observation,
                        FINISH_OBSERVATION.to_string(),
                    );
                    context_lengths.push(ctx.len());
                    break PlannerStatus::Success {
                        answer: answer.clone(),
                    };
                }
            }
            context_lengths.push(ctx.len());
        };

        PlannerOutcome {
            status,
            steps_used,
            transcript,
            context: ctx,
            world,
            actions,
            skill_log,
            context_lengths,
        }
    }

    fn explain(&self, failure: &FailureMessage, request: &str) -> (String, Option<String>) {
        match self.explainer.suggest(failure, request) {
            Some(s) => (
                format!("{}; Suggestion: {}", failure.reason, s.text),
                Some(s.text),
            ),
            None => (failure.reason.clone(), None),
        }
    }

    fn run_skill(
        &self,
        index: u32,
        call: &SkillCall,
        request: &str,
        world: &mut WorldState,
        map: &SemanticMap,
    ) -> SkillReport {
        let mut log = SkillLogEntry {
            index,
            call: call.to_string(),
            error_code: None,
            commands_executed: 0,
            suggestion: None,
        };
        let gate = check_preconditions(call, world, map);
        let node = match gate {
            PrecondResult::Satisfied => {
                extract_target_node(call, map, &world.robot).map_err(|_| {
                    (
                        ErrorCode::NodeNotFound,
                        format!("There is no {} in the semantic map", call.target()),
                    )
                })
            }
            PrecondResult::Unsatisfied { error_code, reason } => Err((error_code, reason)),
        };
        let node = match node {
            Ok(node) => node,
            Err((error_code, reason)) => {
                let failure = FailureMessage {
                    skill: call.name,
                    error_code,
                    reason,
                    failed_command: None,
                };
                let (observation, suggestion) = self.explain(&failure, request);
                log.error_code = Some(error_code);
                log.suggestion = suggestion;
                return SkillReport {
                    observation,
                    log,
                    feedback: vec![format!("precondition failed: {}", error_code.as_str())],
                };
            }
        };

        let commands = self.methods.decompose(call, &node, world);
        let result = execute_skill(call.name, &commands, world);
        log.commands_executed = result.executed_count;
        let feedback = result
            .feedback
            .iter()
            .map(|(cmd, fb)| feedback_line(cmd, fb))
            .collect();
        let observation = match &result.failure {
            None => success_observation(call, &node.id),
            Some(failure) => {
                let (observation, suggestion) = self.explain(failure, request);
                log.error_code = Some(failure.error_code);
                log.suggestion = suggestion;
                observation
            }
        };
        SkillReport {
            observation,
            log,
            feedback,
        }
    }
}

/// Runs the loop with the seed explainer and the built-in method table.
pub fn plan_and_execute(
    request: &str,
    world: WorldState,
    policy: &mut dyn Policy,
    budget: u32,
) -> PlannerOutcome {
    TaskPlanner::default()
        .with_budget(budget)
        .run(request, world, policy)
}
