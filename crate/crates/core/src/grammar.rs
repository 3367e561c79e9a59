//! Strict line syntax shared by policies, transcripts and the chat protocol.
//!
//! ```text
//! Thought: <free text>
//! Perception action: GetObjectInRoom(kitchen)
//! Skill action: PICK(bottle, right)
//! Finish: <answer>
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{PerceptionCall, PerceptionName};
use crate::world::ArmSide;

pub const THOUGHT_TAG: &str = "Thought:";
pub const SKILL_TAG: &str = "Skill action:";
pub const PERCEPTION_TAG: &str = "Perception action:";
pub const FINISH_TAG: &str = "Finish:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("MALFORMED_ACTION: {0}")]
    Malformed(String),
    #[error("UNKNOWN_ACTION_NAME: '{0}'")]
    UnknownName(String),
    #[error("ARITY_MISMATCH: {name} expects {expected} argument(s), got {got}")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("INVALID_ARM: '{0}' is not left or right")]
    InvalidArm(String),
}

impl GrammarError {
    pub fn code(&self) -> &'static str {
        match self {
            GrammarError::Malformed(_) => "MALFORMED_ACTION",
            GrammarError::UnknownName(_) => "UNKNOWN_ACTION_NAME",
            GrammarError::ArityMismatch { .. } => "ARITY_MISMATCH",
            GrammarError::InvalidArm(_) => "INVALID_ARM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SkillName {
    Goto,
    Pick,
    Place,
}

impl SkillName {
    pub const ALL: [SkillName; 3] = [SkillName::Goto, SkillName::Pick, SkillName::Place];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillName::Goto => "GOTO",
            SkillName::Pick => "PICK",
            SkillName::Place => "PLACE",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            SkillName::Goto => 1,
            SkillName::Pick | SkillName::Place => 2,
        }
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SkillName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or(())
    }
}

/// A validated skill invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCall {
    pub name: SkillName,
    pub params: Vec<String>,
}

impl SkillCall {
    pub fn new(name: SkillName, params: Vec<String>) -> Result<Self, GrammarError> {
        if params.len() != name.arity() {
            return Err(GrammarError::ArityMismatch {
                name: name.to_string(),
                expected: name.arity(),
                got: params.len(),
            });
        }
        if name != SkillName::Goto {
            params[1]
                .parse::<ArmSide>()
                .map_err(|_| GrammarError::InvalidArm(params[1].clone()))?;
        }
        Ok(Self { name, params })
    }

    pub fn goto(target: &str) -> Self {
        Self {
            name: SkillName::Goto,
            params: vec![target.to_string()],
        }
    }

    pub fn pick(object: &str, arm: ArmSide) -> Self {
        Self {
            name: SkillName::Pick,
            params: vec![object.to_string(), arm.to_string()],
        }
    }

    pub fn place(object: &str, arm: ArmSide) -> Self {
        Self {
            name: SkillName::Place,
            params: vec![object.to_string(), arm.to_string()],
        }
    }

    /// The node-naming parameter (target for GOTO, object for PICK/PLACE).
    pub fn target(&self) -> &str {
        &self.params[0]
    }

    /// Arm parameter; GOTO has none.
    pub fn arm(&self) -> Option<ArmSide> {
        self.params.get(1).and_then(|a| a.parse().ok())
    }
}

impl fmt::Display for SkillCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.params.join(", "))
    }
}

impl fmt::Display for PerceptionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(", "))
    }
}

/// One element of the augmented action space, plus the terminal `Finish`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "value", rename_all = "snake_case")]
pub enum PolicyAction {
    Thought(String),
    Perception(PerceptionCall),
    Skill(SkillCall),
    Finish(String),
}

impl PolicyAction {
    /// Perception and skill actions act on the environment; thoughts and
    /// `Finish` do not.
    pub fn is_executable(&self) -> bool {
        matches!(self, PolicyAction::Perception(_) | PolicyAction::Skill(_))
    }
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyAction::Thought(t) => write!(f, "{THOUGHT_TAG} {t}"),
            PolicyAction::Perception(call) => write!(f, "{PERCEPTION_TAG} {call}"),
            PolicyAction::Skill(call) => write!(f, "{SKILL_TAG} {call}"),
            PolicyAction::Finish(answer) => write!(f, "{FINISH_TAG} {answer}"),
        }
    }
}

impl FromStr for PolicyAction {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Canonical single-line rendering.
pub fn render_action(action: &PolicyAction) -> String {
    action.to_string()
}

pub fn parse_action(line: &str) -> Result<PolicyAction, GrammarError> {
    if line.contains('\n') || line.contains('\r') {
        return Err(GrammarError::Malformed(
            "action must be a single line".into(),
        ));
    }
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(THOUGHT_TAG) {
        return Ok(PolicyAction::Thought(rest.trim().to_string()));
    }
    if let Some(rest) = line.strip_prefix(FINISH_TAG) {
        return Ok(PolicyAction::Finish(rest.trim().to_string()));
    }
    if let Some(rest) = line.strip_prefix(SKILL_TAG) {
        let (name, args) = parse_call(rest)?;
        let skill = name
            .parse::<SkillName>()
            .map_err(|_| GrammarError::UnknownName(name.to_string()))?;
        return SkillCall::new(skill, args).map(PolicyAction::Skill);
    }
    if let Some(rest) = line.strip_prefix(PERCEPTION_TAG) {
        let (name, args) = parse_call(rest)?;
        let perception = name
            .parse::<PerceptionName>()
            .map_err(|_| GrammarError::UnknownName(name.to_string()))?;
        if args.len() != perception.arity() {
            return Err(GrammarError::ArityMismatch {
                name: name.to_string(),
                expected: perception.arity(),
                got: args.len(),
            });
        }
        return Ok(PolicyAction::Perception(PerceptionCall {
            name: perception,
            args,
        }));
    }
    Err(GrammarError::Malformed(format!(
        "no recognized tag in '{line}'"
    )))
}

fn parse_call(text: &str) -> Result<(&str, Vec<String>), GrammarError> {
    let text = text.trim();
    let open = text
        .find('(')
        .ok_or_else(|| GrammarError::Malformed(format!("missing '(' in '{text}'")))?;
    if !text.ends_with(')') {
        return Err(GrammarError::Malformed(format!(
            "unbalanced parentheses in '{text}'"
        )));
    }
    let name = text[..open].trim();
    let inner = &text[open + 1..text.len() - 1];
    if inner.contains('(') || inner.contains(')') {
        return Err(GrammarError::Malformed(format!(
            "unbalanced parentheses in '{text}'"
        )));
    }
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(GrammarError::Malformed(format!(
            "bad action name in '{text}'"
        )));
    }
    if inner.trim().is_empty() {
        return Ok((name, Vec::new()));
    }
    let args: Vec<String> = inner.split(',').map(|a| a.trim().to_string()).collect();
    if args.iter().any(String::is_empty) {
        return Err(GrammarError::Malformed(format!(
            "empty argument in '{text}'"
        )));
    }
    Ok((name, args))
}

/// Parses a raw policy reply: an optional `Thought:` line followed by one
/// action line. Blank lines are skipped and anything after the action line
/// is ignored.
pub fn parse_reply(text: &str) -> Result<Vec<PolicyAction>, GrammarError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| GrammarError::Malformed("empty reply".into()))?;
    let first = parse_action(first)?;
    if !matches!(first, PolicyAction::Thought(_)) {
        return Ok(vec![first]);
    }
    match lines.next() {
        None => Ok(vec![first]),
        Some(second) => {
            let second = parse_action(second)?;
            if matches!(second, PolicyAction::Thought(_)) {
                return Err(GrammarError::Malformed(
                    "expected an action line after the thought".into(),
                ));
            }
            Ok(vec![first, second])
        }
    }
}
