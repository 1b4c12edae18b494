//! Adapter wire protocol: line-delimited UTF-8 JSON over the adapter's
//! stdin/stdout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{AgentModel, ModelConfig};
use crate::spec::AgentId;

/// The single line written to the adapter's stdin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "run_request", deny_unknown_fields)]
pub struct RunRequest {
    pub case_id: String,
    pub input: String,
    pub config: BTreeMap<AgentId, AgentModel>,
    pub sequence: Vec<AgentId>,
    pub max_rounds: u32,
}

impl RunRequest {
    pub fn new(
        case_id: &str,
        input: &str,
        config: &ModelConfig,
        sequence: &[AgentId],
        max_rounds: u32,
    ) -> Self {
        Self {
            case_id: case_id.to_string(),
            input: input.to_string(),
            config: config.iter().map(|(a, m)| (a.clone(), m.clone())).collect(),
            sequence: sequence.to_vec(),
            max_rounds,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("run request serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
}

/// One event reported by the adapter, as stored in raw run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawEvent {
    Utterance {
        seq: u64,
        agent: AgentId,
        content: String,
    },
    ToolCall {
        seq: u64,
        agent: AgentId,
        tool: String,
        arguments: Map<String, Value>,
        status: ToolStatus,
        output: String,
    },
    Termination {
        seq: u64,
        reason: String,
    },
}

impl RawEvent {
    pub fn seq(&self) -> u64 {
        match self {
            RawEvent::Utterance { seq, .. }
            | RawEvent::ToolCall { seq, .. }
            | RawEvent::Termination { seq, .. } => *seq,
        }
    }

    pub fn agent(&self) -> Option<&AgentId> {
        match self {
            RawEvent::Utterance { agent, .. } | RawEvent::ToolCall { agent, .. } => Some(agent),
            RawEvent::Termination { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultExit {
    Completed,
    Crash,
}

/// A line read from the adapter's stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterLine {
    Event(RawEvent),
    RunResult { exit: ResultExit, detail: String },
}

impl AdapterLine {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("adapter line serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed protocol line: {0}")]
    Malformed(String),
    #[error("non-increasing seq {got} after {previous}")]
    Sequence { previous: u64, got: u64 },
}

/// Parses one adapter line and checks that seq strictly increases from 1.
///
/// `last_seq` starts at 0 and is advanced on every accepted event.
pub fn parse_line(line: &str, last_seq: &mut u64) -> Result<AdapterLine, ProtocolError> {
    let parsed: AdapterLine =
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if let AdapterLine::Event(ev) = &parsed {
        let seq = ev.seq();
        if seq <= *last_seq {
            return Err(ProtocolError::Sequence {
                previous: *last_seq,
                got: seq,
            });
        }
        *last_seq = seq;
    }
    Ok(parsed)
}
