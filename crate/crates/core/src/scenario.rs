//! Scenario files: a world, scheduled events, a request and optionally a
//! scripted policy with the action sequence it is expected to produce.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::DEFAULT_BUDGET;
use crate::policy::ScriptStep;
use crate::world::{ScheduledEvent, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("SCENARIO_PARSE_ERROR: {path}: {message}")]
    Parse { path: String, message: String },
    #[error("SCENARIO_PARSE_ERROR: {path}: invalid world: {source}")]
    World { path: String, source: WorldError },
}

/// One expected step of a golden run. Skill entries may also pin whether
/// the skill is expected to fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedAction {
    Plain(String),
    Detailed {
        action: String,
        #[serde(default)]
        fails: bool,
    },
}

impl ExpectedAction {
    pub fn action(&self) -> &str {
        match self {
            ExpectedAction::Plain(a) | ExpectedAction::Detailed { action: a, .. } => a,
        }
    }

    pub fn fails(&self) -> bool {
        matches!(self, ExpectedAction::Detailed { fails: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Suite grouping: simple, moderate or complex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub world: WorldState,
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    pub request: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_script: Option<Vec<ScriptStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_actions: Option<Vec<ExpectedAction>>,
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> u32 {
    DEFAULT_BUDGET
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse {
            path: name.clone(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &name)
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        scenario.validate(path)?;
        Ok(scenario)
    }

    pub fn validate(&self, path: &str) -> Result<(), ScenarioError> {
        let parse = |message: &str| ScenarioError::Parse {
            path: path.to_string(),
            message: message.to_string(),
        };
        if self.expected_actions.is_some() && self.policy_script.is_none() {
            return Err(parse("expected_actions requires policy_script"));
        }
        if self.budget == 0 {
            return Err(parse("budget must be at least 1"));
        }
        self.world
            .validate()
            .map_err(|source| ScenarioError::World {
                path: path.to_string(),
                source,
            })
    }

    /// The world with the scenario's events scheduled.
    pub fn initial_world(&self) -> WorldState {
        let mut world = self.world.clone();
        world.pending_events.extend(self.events.iter().cloned());
        world
    }
}

/// Accepts either a bare world document or a scenario and returns the world
/// together with the scenario, when there is one.
pub fn load_world(path: &Path) -> Result<(WorldState, Option<Scenario>), ScenarioError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse {
        path: name.clone(),
        message: e.to_string(),
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: name.clone(),
            message: e.to_string(),
        })?;
    if value.get("request").is_some() {
        let scenario = Scenario::parse(&text, &name)?;
        return Ok((scenario.initial_world(), Some(scenario)));
    }
    let world: WorldState = serde_json::from_value(value).map_err(|e| ScenarioError::Parse {
        path: name.clone(),
        message: e.to_string(),
    })?;
    world
        .validate()
        .map_err(|source| ScenarioError::World { path: name, source })?;
    Ok((world, None))
}
