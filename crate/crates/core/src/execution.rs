//! Executor and Controller.
//!
//! Commands run strictly in order against the world. Every command's feedback
//! is classified; the first failure aborts the skill and becomes the failure
//! message handed to the explainer.

use serde::{Deserialize, Serialize};

use crate::grammar::SkillName;
use crate::world::{Command, CommandFeedback, CommandName, ErrorCode, Trigger, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureMessage {
    pub skill: SkillName,
    pub error_code: ErrorCode,
    pub reason: String,
    /// `None` when the skill was rejected by its preconditions.
    pub failed_command: Option<CommandName>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Continue,
    SkillSuccess,
    SkillFailure(FailureMessage),
}

/// Controller decision for one command's feedback.
pub fn classify(
    skill: SkillName,
    command: CommandName,
    feedback: &CommandFeedback,
    is_last: bool,
) -> Verdict {
    match feedback {
        CommandFeedback::Success if is_last => Verdict::SkillSuccess,
        CommandFeedback::Success => Verdict::Continue,
        CommandFeedback::Failure {
            error_code,
            message,
        } => Verdict::SkillFailure(FailureMessage {
            skill,
            error_code: *error_code,
            reason: message.clone(),
            failed_command: Some(command),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOutcome {
    SkillSuccess,
    SkillFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillResult {
    pub outcome: SkillOutcome,
    /// Commands attempted, including the one that failed.
    pub executed_count: usize,
    pub failure: Option<FailureMessage>,
    pub feedback: Vec<(Command, CommandFeedback)>,
}

impl SkillResult {
    pub fn is_success(&self) -> bool {
        self.outcome == SkillOutcome::SkillSuccess
    }
}

/// Runs the commands fail-fast. Clock-triggered events fire before each
/// command, so an external change can land in the middle of a skill.
pub fn execute_skill(
    skill: SkillName,
    commands: &[Command],
    world: &mut WorldState,
) -> SkillResult {
    let mut feedback = Vec::with_capacity(commands.len());
    for (i, cmd) in commands.iter().enumerate() {
        world.fire_events(Trigger::AtStep(world.clock));
        let fb = world.apply_command(cmd);
        let verdict = classify(skill, cmd.name, &fb, i + 1 == commands.len());
        feedback.push((cmd.clone(), fb));
        match verdict {
            Verdict::Continue => {}
            Verdict::SkillSuccess => break,
            Verdict::SkillFailure(failure) => {
                return SkillResult {
                    outcome: SkillOutcome::SkillFailure,
                    executed_count: i + 1,
                    failure: Some(failure),
                    feedback,
                };
            }
        }
    }
    SkillResult {
        outcome: SkillOutcome::SkillSuccess,
        executed_count: commands.len(),
        failure: None,
        feedback,
    }
}
