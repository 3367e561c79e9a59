//! The planner context and the transcript it leaves behind.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    UserRequest,
    RobotStateSummary,
    Thought,
    ActionTaken,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub kind: EntryKind,
    pub text: String,
}

impl ContextEntry {
    pub fn new(kind: EntryKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }
}

/// Escapes line breaks so every entry renders to exactly one line.
fn one_line(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace('\n', "\\n")
        .replace('\r', "\\r")
}

impl fmt::Display for ContextEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = one_line(&self.text);
        match self.kind {
            EntryKind::UserRequest => write!(f, "User Request: \"{text}\""),
            EntryKind::RobotStateSummary => write!(f, "Robot State: {text}"),
            EntryKind::Thought => write!(f, "Thought: {text}"),
            EntryKind::ActionTaken => f.write_str(&text),
            EntryKind::Observation => write!(f, "Observation: {text}"),
        }
    }
}

/// Append-only trace conditioning the policy. The first two entries are
/// always the request and the initial robot-state summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub request: String,
    pub entries: Vec<ContextEntry>,
    /// Completed planner iterations.
    pub step: u32,
}

impl Context {
    pub fn new(request: &str, robot_state: &str) -> Self {
        Self {
            request: request.to_string(),
            entries: vec![
                ContextEntry::new(EntryKind::UserRequest, request),
                ContextEntry::new(EntryKind::RobotStateSummary, robot_state),
            ],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest_observation(&self) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.kind == EntryKind::Observation)
            .map(|e| e.text.as_str())
    }

    pub(crate) fn append(&mut self, entry: ContextEntry) {
        self.entries.push(entry);
    }
}

/// `c_{t+1} = (c_t, entry)`; the input context is left untouched.
pub fn update_context(ctx: &Context, entry: ContextEntry) -> Context {
    let mut next = ctx.clone();
    next.append(entry);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Entry(EntryKind),
    CommandFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub lines: Vec<TranscriptLine>,
}

impl Transcript {
    pub fn push_entry(&mut self, entry: &ContextEntry) {
        self.lines.push(TranscriptLine {
            kind: LineKind::Entry(entry.kind),
            text: entry.text.clone(),
        });
    }

    pub fn push_feedback(&mut self, text: impl Into<String>) {
        self.lines.push(TranscriptLine {
            kind: LineKind::CommandFeedback,
            text: text.into(),
        });
    }

    /// Context entries in order, without execution feedback.
    pub fn entries(&self) -> impl Iterator<Item = ContextEntry> + '_ {
        self.lines.iter().filter_map(|l| match l.kind {
            LineKind::Entry(kind) => Some(ContextEntry::new(kind, l.text.clone())),
            LineKind::CommandFeedback => None,
        })
    }

    /// Every action is followed by exactly one observation, and every
    /// observation answers exactly one action. Feedback lines are ignored.
    pub fn alternation_holds(&self) -> bool {
        let kinds: Vec<EntryKind> = self.entries().map(|e| e.kind).collect();
        kinds.iter().enumerate().all(|(i, kind)| match kind {
            EntryKind::ActionTaken => kinds.get(i + 1) == Some(&EntryKind::Observation),
            EntryKind::Observation => i > 0 && kinds[i - 1] == EntryKind::ActionTaken,
            _ => true,
        })
    }

    /// Line-oriented log, one line per transcript entry.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            match line.kind {
                LineKind::Entry(kind) => {
                    out.push_str(&ContextEntry::new(kind, line.text.clone()).to_string())
                }
                LineKind::CommandFeedback => {
                    out.push_str("  Feedback: ");
                    out.push_str(&one_line(&line.text));
                }
            }
            out.push('\n');
        }
        out
    }
}
