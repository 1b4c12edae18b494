//! Semantic-to-identifier mapping of a run onto the intra-agent space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::harness::{normalize_utterance, RawEvent, RawRunRecord, RunExit, ToolStatus};
use crate::llm::{complete_logged, extract_json, ChatMessage, Exchange, Gateway, StageModel};
use crate::spec::{AgentId, BehaviorKind, BehaviorSpace};

pub const MAPPING_PROMPT: &str = include_str!("../../assets/prompts/behavior_mapping.md");

/// Consecutive blank turns by one agent that count as an empty utterance.
pub const EMPTY_TURN_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BehaviorRef {
    pub agent: AgentId,
    pub behavior_id: u32,
}

impl BehaviorRef {
    pub fn new(agent: impl Into<AgentId>, behavior_id: u32) -> Self {
        Self {
            agent: agent.into(),
            behavior_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingOutcome {
    pub hits: BTreeSet<BehaviorRef>,
    pub warnings: Vec<String>,
    /// Set when at least one gateway call failed.
    pub degraded: bool,
}

/// Agents in order of first appearance in the run.
fn agents_in_run(raw: &RawRunRecord) -> Vec<AgentId> {
    let mut seen = BTreeSet::new();
    raw.events
        .iter()
        .filter_map(RawEvent::agent)
        .filter(|a| seen.insert(*a))
        .cloned()
        .collect()
}

/// Agents that produced `run` consecutive blank turns of their own.
pub fn blank_turn_agents(raw: &RawRunRecord, run: usize) -> BTreeSet<AgentId> {
    let mut streak: BTreeMap<&AgentId, usize> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for ev in &raw.events {
        if let RawEvent::Utterance { agent, content, .. } = ev {
            let s = streak.entry(agent).or_default();
            *s = if content.trim().is_empty() { *s + 1 } else { 0 };
            if *s >= run {
                out.insert(agent.clone());
            }
        }
    }
    out
}

/// Agents credited for a dead loop: those repeating one non-blank utterance
/// `threshold` times in a row, or the last speaker of a timed-out run.
pub fn looping_agents(raw: &RawRunRecord, threshold: usize) -> BTreeSet<AgentId> {
    let mut out = BTreeSet::new();
    let mut prev: Option<(&AgentId, String)> = None;
    let mut run = 0;
    for ev in &raw.events {
        let RawEvent::Utterance { agent, content, .. } = ev else {
            continue;
        };
        let norm = normalize_utterance(content);
        if norm.is_empty() {
            prev = None;
            run = 0;
            continue;
        }
        let same = matches!(&prev, Some((a, c)) if *a == agent && *c == norm);
        run = if same { run + 1 } else { 1 };
        prev = Some((agent, norm));
        if run >= threshold.max(1) {
            out.insert(agent.clone());
        }
    }
    if out.is_empty() && raw.exit == RunExit::Timeout {
        if let Some(last) = raw.events.iter().rev().find_map(|e| match e {
            RawEvent::Utterance { agent, .. } => Some(agent.clone()),
            _ => None,
        }) {
            out.insert(last);
        }
    }
    out
}

/// The agent's whole log, with identical consecutive utterances folded.
fn render_excerpts(raw: &RawRunRecord, agent: &AgentId) -> String {
    let mut out = String::new();
    let mine: Vec<&RawEvent> = raw
        .events
        .iter()
        .filter(|e| e.agent() == Some(agent))
        .collect();
    let mut i = 0;
    while i < mine.len() {
        match mine[i] {
            RawEvent::Utterance { seq, content, .. } => {
                let mut j = i + 1;
                while j < mine.len()
                    && matches!(mine[j], RawEvent::Utterance { content: c, .. } if c == content)
                {
                    j += 1;
                }
                let shown = if content.trim().is_empty() {
                    "(blank)"
                } else {
                    content.as_str()
                };
                if j - i > 1 {
                    let _ = writeln!(
                        out,
                        "[seq {seq}-{}] utterance, repeated {} times: {shown}",
                        mine[j - 1].seq(),
                        j - i
                    );
                } else {
                    let _ = writeln!(out, "[seq {seq}] utterance: {shown}");
                }
                i = j;
            }
            RawEvent::ToolCall {
                seq,
                tool,
                arguments,
                status,
                output,
                ..
            } => {
                let status = match status {
                    ToolStatus::Ok => "ok",
                    ToolStatus::Error => "error",
                };
                let _ = writeln!(
                    out,
                    "[seq {seq}] tool_call `{tool}` status={status} arguments={} output={output}",
                    Value::Object(arguments.clone())
                );
                i += 1;
            }
            RawEvent::Termination { .. } => i += 1,
        }
    }
    if out.is_empty() {
        out.push_str("(no activity)\n");
    }
    out
}

fn render_request(raw: &RawRunRecord, space: &BehaviorSpace, agent: &AgentId) -> String {
    let mut msg = format!("Agent under review: {agent}\n\nCandidate behaviors:\n");
    for b in space.behaviors_of(agent) {
        let kind = serde_json::to_value(b.kind)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let _ = writeln!(msg, "- {} [{kind}]: {}", b.behavior_id, b.description);
    }
    let _ = write!(
        msg,
        "\nExecution log of {agent} for run {}:\n{}",
        raw.case_id,
        render_excerpts(raw, agent)
    );
    msg
}

fn parse_ids(content: &str) -> Result<Vec<Value>, String> {
    let doc = extract_json(content).map_err(|e| e.to_string())?;
    let list = match doc {
        Value::Array(a) => a,
        Value::Object(mut o) => match o.remove("matched_behavior_ids") {
            Some(Value::Array(a)) => a,
            _ => o
                .into_iter()
                .find_map(|(_, v)| match v {
                    Value::Array(a) => Some(a),
                    _ => None,
                })
                .ok_or("response object carries no id list")?,
        },
        _ => return Err("response is neither an array nor an object".into()),
    };
    Ok(list)
}

fn as_id(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Maps one run onto behavior ids with one gateway call per agent, then adds
/// the mechanically decidable boundary behaviors.
pub fn map_behaviors(
    raw: &RawRunRecord,
    dead_loop: bool,
    loop_threshold: usize,
    space: &BehaviorSpace,
    gateway: &Gateway,
    model: &StageModel,
    log: &mut Vec<Exchange>,
) -> MappingOutcome {
    let mut out = MappingOutcome::default();
    let declared: BTreeSet<&AgentId> = space.intra.iter().map(|b| &b.agent).collect();

    for agent in agents_in_run(raw) {
        if !declared.contains(&agent) {
            out.warnings.push(format!(
                "agent `{agent}` appears in the run but not in the behavior space"
            ));
            continue;
        }
        let candidates: BTreeSet<u32> = space.behaviors_of(&agent).map(|b| b.behavior_id).collect();
        let req = model.request(
            MAPPING_PROMPT.to_string(),
            vec![ChatMessage::user(render_request(raw, space, &agent))],
            true,
        );
        let stage = format!("coverage:{agent}");
        let content = match complete_logged(gateway, &stage, req, log) {
            Ok(r) => r.content,
            Err(e) => {
                out.degraded = true;
                out.warnings
                    .push(format!("behavior mapping for `{agent}` failed: {e}"));
                continue;
            }
        };
        match parse_ids(&content) {
            Ok(values) => {
                for v in values {
                    match as_id(&v) {
                        Some(id) if candidates.contains(&id) => {
                            out.hits.insert(BehaviorRef::new(agent.clone(), id));
                        }
                        _ => out.warnings.push(format!(
                            "dropped behavior id {v} for `{agent}`: not a candidate"
                        )),
                    }
                }
            }
            Err(e) => out
                .warnings
                .push(format!("unparseable mapping for `{agent}`: {e}")),
        }
    }

    let find = |agent: &AgentId, kind: BehaviorKind| {
        space
            .behaviors_of(agent)
            .find(|b| b.kind == kind)
            .map(|b| BehaviorRef::new(agent.clone(), b.behavior_id))
    };
    for agent in blank_turn_agents(raw, EMPTY_TURN_RUN) {
        out.hits
            .extend(find(&agent, BehaviorKind::BoundaryEmptyUtterance));
    }
    if dead_loop {
        for agent in looping_agents(raw, loop_threshold) {
            out.hits
                .extend(find(&agent, BehaviorKind::BoundaryUnproductiveLoop));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RAW_SCHEMA;
    use crate::llm::{MockEntry, ProviderBinding};
    use crate::spec::{BehaviorDef, ExecutionPathSpace, Path, SPACE_SCHEMA};

    fn space() -> BehaviorSpace {
        let mut intra = Vec::new();
        for agent in ["S", "D"] {
            intra.push(BehaviorDef {
                behavior_id: 1,
                agent: agent.into(),
                kind: BehaviorKind::Expected,
                description: "does the job".into(),
            });
            for (i, k) in BehaviorKind::BOUNDARY.iter().enumerate() {
                intra.push(BehaviorDef {
                    behavior_id: 2 + i as u32,
                    agent: agent.into(),
                    kind: *k,
                    description: k.default_description().into(),
                });
            }
        }
        BehaviorSpace {
            schema_version: SPACE_SCHEMA.into(),
            intra,
            paths: ExecutionPathSpace {
                legal_paths: vec![Path::new(["S", "D"])],
                max_turns: None,
            },
        }
    }

    fn raw(events: Vec<(&str, &str)>) -> RawRunRecord {
        RawRunRecord {
            schema_version: RAW_SCHEMA.into(),
            case_id: "c".into(),
            events: events
                .into_iter()
                .enumerate()
                .map(|(i, (a, c))| RawEvent::Utterance {
                    seq: i as u64 + 1,
                    agent: a.into(),
                    content: c.into(),
                })
                .collect(),
            exit: RunExit::Completed,
            detail: String::new(),
            stderr_tail: String::new(),
            started_at_ms: 0,
            ended_at_ms: 0,
        }
    }

    fn gateway(entries: Vec<MockEntry>) -> Gateway {
        Gateway::connect(&ProviderBinding::mock(entries)).unwrap()
    }

    #[test]
    fn maps_expected_and_drops_unknown_ids() {
        let gw = gateway(vec![
            MockEntry::new(
                "Agent under review: S",
                r#"{"matched_behavior_ids":[1, 99]}"#,
            )
            .repeating(),
            MockEntry::any("[1]").repeating(),
        ]);
        let out = map_behaviors(
            &raw(vec![("S", "hi"), ("D", "bye")]),
            false,
            3,
            &space(),
            &gw,
            &StageModel::default(),
            &mut Vec::new(),
        );
        assert_eq!(
            out.hits,
            [BehaviorRef::new("D", 1), BehaviorRef::new("S", 1)].into()
        );
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn mechanical_boundaries() {
        let gw = gateway(vec![MockEntry::any("[]").repeating()]);
        let r = raw(vec![("S", "a"), ("D", ""), ("D", "  "), ("D", "\n")]);
        let out = map_behaviors(
            &r,
            false,
            3,
            &space(),
            &gw,
            &StageModel::default(),
            &mut Vec::new(),
        );
        assert_eq!(out.hits, [BehaviorRef::new("D", 2)].into());

        let r = raw(vec![
            ("S", "a"),
            ("D", "again"),
            ("D", "Again"),
            ("D", "again "),
        ]);
        let out = map_behaviors(
            &r,
            true,
            3,
            &space(),
            &gw,
            &StageModel::default(),
            &mut Vec::new(),
        );
        assert_eq!(out.hits, [BehaviorRef::new("D", 3)].into());
    }

    #[test]
    fn gateway_failure_keeps_mechanical_hits() {
        let gw = gateway(vec![]);
        let r = raw(vec![("D", ""), ("D", ""), ("D", "")]);
        let out = map_behaviors(
            &r,
            false,
            3,
            &space(),
            &gw,
            &StageModel::default(),
            &mut Vec::new(),
        );
        assert!(out.degraded);
        assert_eq!(out.hits, [BehaviorRef::new("D", 2)].into());
    }

    #[test]
    fn excerpts_fold_repeats() {
        let r = raw(vec![("D", "x"), ("D", "x"), ("D", "x")]);
        assert_eq!(
            render_excerpts(&r, &"D".into()),
            "[seq 1-3] utterance, repeated 3 times: x\n"
        );
    }
}
