//! Raw run records distilled into semantic event sequences.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::harness::{detect_dead_loop, RawEvent, RawRunRecord, RunExit, RunLimits, ToolStatus};
use crate::spec::AgentId;

pub const SEMANTIC_SCHEMA: &str = "flare-semantic/1";

/// Characters kept verbatim in front of a digest.
pub const DIGEST_PREFIX_CHARS: usize = 120;

fn boundary() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Latin terminators need trailing whitespace or end of text; CJK
    // terminators end a sentence on their own.
    RE.get_or_init(|| Regex::new(r"[.!?]+(?:\s+|$)|[。！？]+\s*").expect("valid sentence regex"))
}

/// Splits text into trimmed, non-empty sentences that are verbatim
/// substrings of the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in boundary().find_iter(text) {
        let s = text[start..m.end()].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = m.end();
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "CondensedRepr", into = "CondensedRepr")]
pub struct CondensedUtterance {
    pub first_sentence: String,
    pub median_sentence: String,
    pub last_sentence: String,
    pub sentence_count: usize,
}

/// Serialized form: fields that merely repeat `first_sentence` are left out.
#[derive(Serialize, Deserialize)]
struct CondensedRepr {
    first_sentence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    median_sentence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_sentence: Option<String>,
    sentence_count: usize,
}

impl From<CondensedUtterance> for CondensedRepr {
    fn from(c: CondensedUtterance) -> Self {
        Self {
            median_sentence: (c.sentence_count >= 3).then_some(c.median_sentence),
            last_sentence: (c.sentence_count >= 2).then_some(c.last_sentence),
            first_sentence: c.first_sentence,
            sentence_count: c.sentence_count,
        }
    }
}

impl From<CondensedRepr> for CondensedUtterance {
    fn from(r: CondensedRepr) -> Self {
        Self {
            median_sentence: r
                .median_sentence
                .unwrap_or_else(|| r.first_sentence.clone()),
            last_sentence: r.last_sentence.unwrap_or_else(|| r.first_sentence.clone()),
            first_sentence: r.first_sentence,
            sentence_count: r.sentence_count,
        }
    }
}

/// First, median (1-based index ⌈k/2⌉) and last sentence of `text`.
pub fn condense_utterance(text: &str) -> CondensedUtterance {
    let s = split_sentences(text);
    let k = s.len();
    if k == 0 {
        return CondensedUtterance::default();
    }
    CondensedUtterance {
        first_sentence: s[0].to_string(),
        median_sentence: s[k.div_ceil(2) - 1].to_string(),
        last_sentence: s[k - 1].to_string(),
        sentence_count: k,
    }
}

/// SHA-256 based digest of a payload plus a readable prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadDigest {
    pub sha256_16: String,
    pub prefix: String,
}

impl PayloadDigest {
    pub fn of(text: &str) -> Self {
        let hash = Sha256::digest(text.as_bytes());
        Self {
            sha256_16: hex::encode(&hash[..8]),
            prefix: text.chars().take(DIGEST_PREFIX_CHARS).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRecord {
    pub caller: AgentId,
    pub tool: String,
    pub arguments: PayloadDigest,
    pub status: ToolStatus,
    pub output: PayloadDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SemanticEvent {
    Turn {
        seq: u64,
        agent: AgentId,
        condensed: CondensedUtterance,
    },
    Tool {
        seq: u64,
        tool_record: ToolRecord,
    },
    Termination {
        seq: u64,
        reason: String,
    },
}

impl SemanticEvent {
    pub fn seq(&self) -> u64 {
        match self {
            SemanticEvent::Turn { seq, .. }
            | SemanticEvent::Tool { seq, .. }
            | SemanticEvent::Termination { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEventSequence {
    pub schema_version: String,
    pub case_id: String,
    pub events: Vec<SemanticEvent>,
    pub speaker_order: Vec<AgentId>,
    pub dead_loop: bool,
    pub exit: RunExit,
}

impl SemanticEventSequence {
    pub fn tool_records(&self) -> impl Iterator<Item = (u64, &ToolRecord)> {
        self.events.iter().filter_map(|e| match e {
            SemanticEvent::Tool { seq, tool_record } => Some((*seq, tool_record)),
            _ => None,
        })
    }

    pub fn termination(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match e {
            SemanticEvent::Termination { reason, .. } => Some(reason.as_str()),
            _ => None,
        })
    }
}

/// Order-preserving distillation of a raw record.
pub fn build_event_sequence(raw: &RawRunRecord, limits: &RunLimits) -> SemanticEventSequence {
    let events: Vec<SemanticEvent> = raw
        .events
        .iter()
        .map(|e| match e {
            RawEvent::Utterance {
                seq,
                agent,
                content,
            } => SemanticEvent::Turn {
                seq: *seq,
                agent: agent.clone(),
                condensed: condense_utterance(content),
            },
            RawEvent::ToolCall {
                seq,
                agent,
                tool,
                arguments,
                status,
                output,
            } => SemanticEvent::Tool {
                seq: *seq,
                tool_record: ToolRecord {
                    caller: agent.clone(),
                    tool: tool.clone(),
                    arguments: PayloadDigest::of(
                        &serde_json::Value::Object(arguments.clone()).to_string(),
                    ),
                    status: *status,
                    output: PayloadDigest::of(output),
                },
            },
            RawEvent::Termination { seq, reason } => SemanticEvent::Termination {
                seq: *seq,
                reason: reason.clone(),
            },
        })
        .collect();
    let speaker_order = raw
        .events
        .iter()
        .filter_map(|e| match e {
            RawEvent::Utterance { agent, .. } => Some(agent.clone()),
            _ => None,
        })
        .collect();
    SemanticEventSequence {
        schema_version: SEMANTIC_SCHEMA.to_string(),
        case_id: raw.case_id.clone(),
        events,
        speaker_order,
        dead_loop: detect_dead_loop(&raw.events, raw.exit, limits.loop_repeat_threshold),
        exit: raw.exit,
    }
}
