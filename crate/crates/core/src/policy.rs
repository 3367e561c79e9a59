//! The decision function: given the context, produce the next action.
//!
//! Two implementations share the [`Policy`] trait. [`ScriptedPolicy`] replays
//! a fixed list of steps and is what every test and shipped scenario uses.
//! [`EndpointPolicy`] talks to a chat-completions style HTTP endpoint.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::context::Context;
use crate::grammar::{parse_action, parse_reply, render_action, GrammarError, PolicyAction};

const PREAMBLE: &str = include_str!("../assets/preamble.txt");

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("SCRIPT_EXHAUSTED: the script has no step {0}")]
    ScriptExhausted(usize),
    #[error("SCRIPT_PATTERN_MISMATCH: step {step} expects an observation containing '{pattern}', latest is '{observation}'")]
    ScriptPatternMismatch {
        step: usize,
        pattern: String,
        observation: String,
    },
    #[error("SCRIPT_INVALID_ACTION: step {step}: {source}")]
    ScriptInvalidAction { step: usize, source: GrammarError },
    #[error("ENDPOINT_TIMEOUT: no reply within {0} s")]
    EndpointTimeout(f64),
    #[error("MALFORMED_AFTER_RETRIES: {attempts} replies failed to parse, last error: {last}")]
    MalformedAfterRetries { attempts: u32, last: GrammarError },
    #[error("ENDPOINT_ERROR: {0}")]
    Endpoint(String),
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
}

impl PolicyError {
    pub fn code(&self) -> &'static str {
        match self {
            PolicyError::ScriptExhausted(_) => "SCRIPT_EXHAUSTED",
            PolicyError::ScriptPatternMismatch { .. } => "SCRIPT_PATTERN_MISMATCH",
            PolicyError::ScriptInvalidAction { .. } => "SCRIPT_INVALID_ACTION",
            PolicyError::EndpointTimeout(_) => "ENDPOINT_TIMEOUT",
            PolicyError::MalformedAfterRetries { .. } => "MALFORMED_AFTER_RETRIES",
            PolicyError::Endpoint(_) => "ENDPOINT_ERROR",
            PolicyError::InvalidConfig(_) => "INVALID_CONFIG",
        }
    }
}

pub trait Policy {
    fn decide(&mut self, ctx: &Context) -> Result<PolicyAction, PolicyError>;
}

/// Rendered prompt. `system` carries the fixed preamble; `user` the context
/// entries followed by the generation cue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

pub fn preamble() -> &'static str {
    PREAMBLE
}

pub fn render_prompt(ctx: &Context) -> Prompt {
    let mut user = String::new();
    for entry in &ctx.entries {
        user.push_str(&entry.to_string());
        user.push('\n');
    }
    user.push_str("Thought:");
    Prompt {
        system: PREAMBLE.to_string(),
        user,
    }
}

/// Round-trips an action through the grammar so nothing invalid escapes.
fn revalidate(action: &PolicyAction) -> Result<PolicyAction, GrammarError> {
    let parsed = parse_action(&render_action(action))?;
    if &parsed == action {
        Ok(parsed)
    } else {
        Err(GrammarError::Malformed(format!(
            "'{action}' does not survive a render/parse round-trip"
        )))
    }
}

/// Script actions are written in the grammar's line format.
mod action_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::grammar::{parse_action, render_action, PolicyAction};

    pub fn serialize<S: Serializer>(action: &PolicyAction, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&render_action(action))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PolicyAction, D::Error> {
        let line = String::deserialize(d)?;
        parse_action(&line).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    /// Substring the latest observation must contain before this step runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(with = "action_text")]
    pub action: PolicyAction,
}

impl ScriptStep {
    pub fn new(action: PolicyAction) -> Self {
        Self {
            expect: None,
            action,
        }
    }

    pub fn expecting(pattern: &str, action: PolicyAction) -> Self {
        Self {
            expect: Some(pattern.to_string()),
            action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    steps: Vec<ScriptStep>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self { steps, cursor: 0 }
    }

    pub fn from_actions(actions: impl IntoIterator<Item = PolicyAction>) -> Self {
        Self::new(actions.into_iter().map(ScriptStep::new).collect())
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl Policy for ScriptedPolicy {
    fn decide(&mut self, ctx: &Context) -> Result<PolicyAction, PolicyError> {
        let index = self.cursor;
        let step = self
            .steps
            .get(index)
            .ok_or(PolicyError::ScriptExhausted(index + 1))?;
        if let Some(pattern) = &step.expect {
            let observation = ctx.latest_observation().unwrap_or_default();
            if !observation.contains(pattern.as_str()) {
                return Err(PolicyError::ScriptPatternMismatch {
                    step: index + 1,
                    pattern: pattern.clone(),
                    observation: observation.to_string(),
                });
            }
        }
        let action =
            revalidate(&step.action).map_err(|source| PolicyError::ScriptInvalidAction {
                step: index + 1,
                source,
            })?;
        self.cursor += 1;
        Ok(action)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointPolicyConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Seconds.
    pub timeout: f64,
    #[serde(default)]
    pub max_retries_on_malformed: u32,
}

impl EndpointPolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(PolicyError::InvalidConfig(format!(
                "timeout must be positive, got {}",
                self.timeout
            )));
        }
        if self.url.trim().is_empty() {
            return Err(PolicyError::InvalidConfig("url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Sends one chat request and returns the first choice's content.
pub trait ChatTransport {
    fn complete(
        &mut self,
        config: &EndpointPolicyConfig,
        messages: &[ChatMessage],
    ) -> Result<String, PolicyError>;
}

#[derive(Debug, Default)]
pub struct HttpTransport;

impl ChatTransport for HttpTransport {
    fn complete(
        &mut self,
        config: &EndpointPolicyConfig,
        messages: &[ChatMessage],
    ) -> Result<String, PolicyError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .build()
            .into();
        let body = json!({ "model": config.model, "messages": messages });
        let mut request = agent.post(&config.url);
        match std::env::var(&config.api_key_env) {
            Ok(key) => request = request.header("Authorization", &format!("Bearer {key}")),
            Err(_) => log::warn!(
                "{} is not set, sending without authorization",
                config.api_key_env
            ),
        }
        let mut response = request.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => PolicyError::EndpointTimeout(config.timeout),
            other => PolicyError::Endpoint(other.to_string()),
        })?;
        let reply: serde_json::Value = response.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => PolicyError::EndpointTimeout(config.timeout),
            other => PolicyError::Endpoint(other.to_string()),
        })?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| PolicyError::Endpoint("reply has no choices[0].message.content".into()))
    }
}

/// Policy backed by a chat endpoint. A reply holding a thought and an action
/// yields the thought now and queues the action for the next call.
pub struct EndpointPolicy {
    config: EndpointPolicyConfig,
    transport: Box<dyn ChatTransport + Send>,
    pending: VecDeque<PolicyAction>,
}

impl std::fmt::Debug for EndpointPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EndpointPolicy")
            .field("config", &self.config)
            .field("pending", &self.pending)
            .finish()
    }
}

impl EndpointPolicy {
    pub fn new(config: EndpointPolicyConfig) -> Result<Self, PolicyError> {
        Self::with_transport(config, Box::new(HttpTransport))
    }

    pub fn with_transport(
        config: EndpointPolicyConfig,
        transport: Box<dyn ChatTransport + Send>,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            pending: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &EndpointPolicyConfig {
        &self.config
    }
}

fn correction_notice(error: &GrammarError) -> String {
    format!(
        "Your previous reply could not be parsed ({error}). Answer with an optional \
         'Thought:' line followed by exactly one 'Perception action:', 'Skill action:' \
         or 'Finish:' line."
    )
}

impl Policy for EndpointPolicy {
    fn decide(&mut self, ctx: &Context) -> Result<PolicyAction, PolicyError> {
        if let Some(action) = self.pending.pop_front() {
            return Ok(action);
        }
        let prompt = render_prompt(ctx);
        let mut messages = vec![
            ChatMessage {
                role: Role::System,
                content: prompt.system,
            },
            ChatMessage {
                role: Role::User,
                content: prompt.user,
            },
        ];
        let mut attempts = 0;
        loop {
            attempts += 1;
            let reply = self.transport.complete(&self.config, &messages)?;
            let parsed = parse_reply(&reply).and_then(|actions| {
                actions
                    .iter()
                    .map(revalidate)
                    .collect::<Result<Vec<_>, _>>()
            });
            match parsed {
                Ok(actions) => {
                    let mut actions = VecDeque::from(actions);
                    let first = actions
                        .pop_front()
                        .expect("parse_reply yields at least one action");
                    self.pending = actions;
                    return Ok(first);
                }
                Err(e) if attempts > self.config.max_retries_on_malformed => {
                    return Err(PolicyError::MalformedAfterRetries { attempts, last: e });
                }
                Err(e) => {
                    log::debug!("malformed reply {reply:?}: {e}");
                    messages.push(ChatMessage {
                        role: Role::User,
                        content: correction_notice(&e),
                    });
                }
            }
        }
    }
}
