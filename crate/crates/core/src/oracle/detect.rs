//! The Failure Agent plus the mechanical detectors.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde_json::Value;

use super::{DetectionSource, RootCause, Segment, Violation};
use crate::harness::{RunExit, ToolStatus};
use crate::llm::{complete_logged, extract_json, ChatMessage, Exchange, Gateway, StageModel};
use crate::logs::{CondensedUtterance, SemanticEvent, SemanticEventSequence};
use crate::spec::{AgentId, Pattern, Specification};

pub const DETECTION_PROMPT: &str = include_str!("../../assets/prompts/failure_detection.md");

/// Outcome of detection on one run.
#[derive(Debug, Clone, Default)]
pub struct Detection {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
    /// The Failure Agent was unreachable; only mechanical findings remain.
    pub degraded: bool,
}

fn turns(
    seq: &SemanticEventSequence,
) -> impl Iterator<Item = (u64, &AgentId, &CondensedUtterance)> {
    seq.events.iter().filter_map(|e| match e {
        SemanticEvent::Turn {
            seq,
            agent,
            condensed,
        } => Some((*seq, agent, condensed)),
        _ => None,
    })
}

fn run_segment(seq: &SemanticEventSequence) -> Segment {
    let first = seq.events.first().map_or(0, SemanticEvent::seq);
    let last = seq.events.last().map_or(0, SemanticEvent::seq);
    Segment::new(first, last)
}

fn condensed_text(c: &CondensedUtterance) -> String {
    if c.sentence_count == 0 {
        return "(blank)".into();
    }
    let mut parts: Vec<&str> = vec![&c.first_sentence];
    for s in [&c.median_sentence, &c.last_sentence] {
        if !s.is_empty() && parts.last() != Some(&s.as_str()) && !parts.contains(&s.as_str()) {
            parts.push(s);
        }
    }
    parts.join(" ... ")
}

fn has_token(c: &CondensedUtterance, keyword: &str) -> bool {
    [&c.first_sentence, &c.median_sentence, &c.last_sentence]
        .iter()
        .any(|s| {
            s.split(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
                .any(|t| t == keyword)
        })
}

/// Consecutive turns by one speaker collapsed to `(agent, first seq, last seq, count)`.
fn speaker_runs(seq: &SemanticEventSequence) -> Vec<(&AgentId, u64, u64, usize)> {
    let mut runs: Vec<(&AgentId, u64, u64, usize)> = Vec::new();
    for (s, agent, _) in turns(seq) {
        match runs.last_mut() {
            Some(r) if r.0 == agent => {
                r.2 = s;
                r.3 += 1;
            }
            _ => runs.push((agent, s, s, 1)),
        }
    }
    runs
}

/// The four logs handed to the Failure Agent.
pub fn render_log_bundle(seq: &SemanticEventSequence, spec: &Specification) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Run: {}\n\n## Log 1: speaking order", seq.case_id);
    for (agent, a, b, n) in speaker_runs(seq) {
        if n == 1 {
            let _ = writeln!(out, "[seq {a}] {agent}");
        } else {
            let _ = writeln!(out, "[seq {a}-{b}] {agent} ({n} consecutive turns)");
        }
    }

    let _ = writeln!(out, "\n## Log 2: tool calls");
    let records: Vec<_> = seq.tool_records().collect();
    if records.is_empty() {
        let _ = writeln!(out, "(no tool calls)");
    }
    for (s, r) in &records {
        let status = match r.status {
            ToolStatus::Ok => "ok",
            ToolStatus::Error => "error",
        };
        let _ = writeln!(
            out,
            "[seq {s}] {} -> {} status={status} arguments={} output={}",
            r.caller, r.tool, r.arguments.prefix, r.output.prefix
        );
    }
    let _ = writeln!(out, "Per-agent tool summary:");
    let spoke: BTreeSet<&AgentId> = seq.speaker_order.iter().collect();
    for agent in &spec.agents {
        let called: Vec<&str> = {
            let mut v: Vec<&str> = Vec::new();
            for (_, r) in &records {
                if r.caller == agent.id && !v.contains(&r.tool.as_str()) {
                    v.push(&r.tool);
                }
            }
            v
        };
        let expected: Vec<&str> = agent.tools.iter().map(|t| t.name.as_str()).collect();
        let line = match (expected.is_empty(), called.is_empty()) {
            (true, true) => "no tools expected".to_string(),
            (true, false) => format!("no tools expected; called [{}]", called.join(", ")),
            (false, false) => format!(
                "expected tools [{}]; called [{}]",
                expected.join(", "),
                called.join(", ")
            ),
            (false, true) if spoke.contains(&agent.id) => {
                format!("expected tools [{}]; called none", expected.join(", "))
            }
            (false, true) => format!("expected tools [{}]; did not speak", expected.join(", ")),
        };
        let _ = writeln!(out, "- {}: {line}", agent.id);
    }

    let _ = writeln!(out, "\n## Log 3: condensed utterances per agent");
    let mut agents: Vec<&AgentId> = spec.agents.iter().map(|a| &a.id).collect();
    for a in &seq.speaker_order {
        if !agents.contains(&a) {
            agents.push(a);
        }
    }
    for agent in agents {
        let _ = writeln!(out, "### {agent}");
        let mine: Vec<(u64, String)> = turns(seq)
            .filter(|(_, a, _)| *a == agent)
            .map(|(s, _, c)| (s, condensed_text(c)))
            .collect();
        if mine.is_empty() {
            let _ = writeln!(out, "(did not speak)");
        }
        let mut i = 0;
        while i < mine.len() {
            let mut j = i;
            while j + 1 < mine.len() && mine[j + 1].1 == mine[i].1 {
                j += 1;
            }
            if j == i {
                let _ = writeln!(out, "[seq {}] {}", mine[i].0, mine[i].1);
            } else {
                let _ = writeln!(
                    out,
                    "[seq {}-{}] repeated {} times: {}",
                    mine[i].0,
                    mine[j].0,
                    j - i + 1,
                    mine[i].1
                );
            }
            i = j + 1;
        }
    }

    let _ = writeln!(out, "\n## Log 4: loop flag and exit");
    let _ = writeln!(out, "dead_loop: {}", seq.dead_loop);
    let _ = writeln!(
        out,
        "exit: {}",
        serde_json::to_value(seq.exit)
            .unwrap_or_default()
            .as_str()
            .unwrap_or("?")
    );
    match seq.events.iter().find_map(|e| match e {
        SemanticEvent::Termination { seq, reason } => Some((seq, reason)),
        _ => None,
    }) {
        Some((s, reason)) => {
            let _ = writeln!(out, "termination: {reason} (seq {s})");
        }
        None => {
            let _ = writeln!(out, "termination: none recorded");
        }
    }
    out
}

fn order_violation(seq: &SemanticEventSequence, spec: &Specification) -> Option<Violation> {
    let runs = speaker_runs(seq);
    match spec.relationships.pattern {
        Pattern::Workflow => {
            let order = spec
                .relationships
                .fixed_order
                .as_deref()
                .filter(|o| !o.is_empty())?;
            let (i, (agent, s, _, _)) = runs
                .iter()
                .enumerate()
                .find(|(i, r)| *r.0 != order[i % order.len()])?;
            Some(Violation::new(
                &seq.case_id,
                RootCause::SpeakingOrderViolation,
                Some((*agent).clone()),
                Segment::new(*s, *s),
                format!(
                    "{agent} spoke where the fixed order expects {}",
                    order[i % order.len()]
                ),
                DetectionSource::Mechanical,
            ))
        }
        Pattern::FreeForm => {
            let deps = spec.effective_dependencies();
            let mut spoken: BTreeSet<&AgentId> = BTreeSet::new();
            for (agent, s, _, _) in runs {
                if !spoken.contains(agent) {
                    if let Some(d) = deps
                        .iter()
                        .find(|d| d.after == *agent && !spoken.contains(&d.before))
                    {
                        return Some(Violation::new(
                            &seq.case_id,
                            RootCause::SpeakingOrderViolation,
                            Some(agent.clone()),
                            Segment::new(s, s),
                            format!("{agent} spoke before {}, which it depends on", d.before),
                            DetectionSource::Mechanical,
                        ));
                    }
                }
                spoken.insert(agent);
            }
            None
        }
    }
}

/// Detectors decidable from event structure alone.
pub fn mechanical_violations(seq: &SemanticEventSequence, spec: &Specification) -> Vec<Violation> {
    let mut out: Vec<Violation> = order_violation(seq, spec).into_iter().collect();
    let keyword = spec
        .termination
        .keyword
        .as_deref()
        .filter(|k| !k.is_empty());
    let first_keyword = keyword.and_then(|k| {
        turns(seq)
            .find(|(_, _, c)| has_token(c, k))
            .map(|(s, _, _)| s)
    });
    let whole = run_segment(seq);

    if let (true, Some(k), Some(at)) = (seq.dead_loop, keyword, first_keyword) {
        let looping = turns(seq).last().map(|(_, a, _)| a.clone());
        out.push(Violation::new(
            &seq.case_id,
            RootCause::TerminationConditionViolation,
            looping,
            Segment::new(at, whole.last_seq),
            format!("conversation kept going after the termination keyword {k} was issued"),
            DetectionSource::Mechanical,
        ));
    }

    let terminated = seq.termination();
    let capped = matches!(seq.exit, RunExit::EventCap | RunExit::Timeout) && terminated.is_none();
    let round_limit =
        terminated.is_some_and(|r| r.starts_with("max_round")) && first_keyword.is_none();
    if capped {
        out.push(Violation::new(
            &seq.case_id,
            RootCause::MaxRoundExceeded,
            None,
            whole,
            "run hit the harness limit without any termination event",
            DetectionSource::Mechanical,
        ));
    } else if round_limit {
        out.push(Violation::new(
            &seq.case_id,
            RootCause::MaxRoundExceeded,
            None,
            whole,
            "round limit ended the run before the termination condition was met",
            DetectionSource::Mechanical,
        ));
    }
    out
}

const TYPE_KEYWORDS: &[(&[&str], RootCause)] = &[
    (&["schema", "argument"], RootCause::ToolSchemaMismatch),
    (
        &["max_round", "round_limit", "max_turn"],
        RootCause::MaxRoundExceeded,
    ),
    (
        &["speak", "order", "relationship", "sequence"],
        RootCause::SpeakingOrderViolation,
    ),
    (
        &["terminat", "halt", "stop", "premature"],
        RootCause::TerminationConditionViolation,
    ),
    (&["refus", "declin"], RootCause::ExplicitRefusal),
    (
        &["role", "persona", "impersonat"],
        RootCause::RoleMisalignment,
    ),
    (
        &["repeat", "repetit", "loop", "redundan"],
        RootCause::RepetitiveExecution,
    ),
    (
        &["malformed", "format", "structur", "invalid_output"],
        RootCause::MalformedOutput,
    ),
    (
        &["omission", "empty", "blank", "no_response", "silent"],
        RootCause::ResponseOmission,
    ),
    (
        &["deviat", "instruction", "off_task", "prompt", "unrelated"],
        RootCause::PromptInstructionDeviation,
    ),
];

/// Maps a free-text violation type onto a root-cause subtype.
pub fn classify_type(raw: &str) -> Option<RootCause> {
    let norm: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect();
    let norm = norm
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_");
    if let Some(r) = RootCause::ALL.iter().find(|r| r.as_str() == norm) {
        return Some(*r);
    }
    if norm.contains("tool") {
        if ["error", "fail", "exception", "crash"]
            .iter()
            .any(|k| norm.contains(k))
        {
            return Some(RootCause::ToolExecutionError);
        }
        if ["schema", "argument", "parameter", "mismatch"]
            .iter()
            .any(|k| norm.contains(k))
        {
            return Some(RootCause::ToolSchemaMismatch);
        }
        if ["omi", "miss", "not_call", "skip", "never"]
            .iter()
            .any(|k| norm.contains(k))
        {
            return Some(RootCause::ToolOmission);
        }
    }
    TYPE_KEYWORDS
        .iter()
        .find(|(keys, _)| keys.iter().any(|k| norm.contains(k)))
        .map(|(_, r)| *r)
}

fn parse_findings(
    content: &str,
    seq: &SemanticEventSequence,
    spec: &Specification,
    warnings: &mut Vec<String>,
) -> Vec<Violation> {
    if content.trim().is_empty() {
        return Vec::new();
    }
    let doc = match extract_json(content) {
        Ok(v) => v,
        Err(e) => {
            warnings.push(format!(
                "{}: failure agent answer unusable: {e}",
                seq.case_id
            ));
            return Vec::new();
        }
    };
    let items = match doc {
        Value::Null => return Vec::new(),
        Value::Array(a) => a,
        Value::Object(o) if o.is_empty() => return Vec::new(),
        Value::Object(mut o) => match o.remove("violations") {
            Some(Value::Array(a)) => a,
            Some(_) => Vec::new(),
            None => vec![Value::Object(o)],
        },
        _ => {
            warnings.push(format!(
                "{}: failure agent answer is not a list",
                seq.case_id
            ));
            return Vec::new();
        }
    };
    let known = spec.agent_ids();
    let whole = run_segment(seq);
    let mut out = Vec::new();
    for item in items {
        let ty = item
            .get("type")
            .or_else(|| item.get("violated_specification_type"))
            .and_then(Value::as_str)
            .unwrap_or_default();
        let Some(root_cause) = classify_type(ty) else {
            warnings.push(format!(
                "{}: unmappable violation type `{ty}` dropped",
                seq.case_id
            ));
            continue;
        };
        let agent = match item.get("agent").and_then(Value::as_str) {
            Some(a) if known.iter().any(|k| k.as_str() == a) => Some(AgentId::from(a)),
            Some(a) => {
                warnings.push(format!(
                    "{}: finding names unknown agent `{a}`",
                    seq.case_id
                ));
                None
            }
            None => None,
        };
        let segment = item
            .get("segment")
            .and_then(Value::as_array)
            .and_then(|s| {
                Some(Segment::new(
                    s.first()?.as_u64()?,
                    s.get(1).or(s.first())?.as_u64()?,
                ))
            })
            .unwrap_or(whole);
        let description = item
            .get("description")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .unwrap_or("(no description)");
        out.push(Violation::new(
            &seq.case_id,
            root_cause,
            agent,
            segment,
            description,
            DetectionSource::Llm,
        ));
    }
    out
}

/// Mechanical detectors plus one Failure Agent call.
///
/// An LLM finding that repeats a mechanical one (same subtype and agent)
/// is dropped so the run is not double counted.
pub fn detect(
    seq: &SemanticEventSequence,
    spec: &Specification,
    gateway: &Gateway,
    model: &StageModel,
    log: &mut Vec<Exchange>,
) -> Detection {
    let mut det = Detection {
        violations: mechanical_violations(seq, spec),
        ..Detection::default()
    };
    let contract = serde_json::to_string_pretty(spec).unwrap_or_default();
    let user = format!(
        "## Contract\n{contract}\n\n{}",
        render_log_bundle(seq, spec)
    );
    let req = model.request(
        DETECTION_PROMPT.to_string(),
        vec![ChatMessage::user(user)],
        true,
    );
    match complete_logged(gateway, &format!("oracle:detect:{}", seq.case_id), req, log) {
        Ok(resp) => {
            for v in parse_findings(&resp.content, seq, spec, &mut det.warnings) {
                let dup = det
                    .violations
                    .iter()
                    .any(|m| m.root_cause == v.root_cause && m.agent == v.agent);
                if !dup {
                    det.violations.push(v);
                }
            }
        }
        Err(e) => {
            det.degraded = true;
            det.warnings.push(format!(
                "{}: failure agent unavailable ({e}); mechanical findings only",
                seq.case_id
            ));
        }
    }
    det
}
