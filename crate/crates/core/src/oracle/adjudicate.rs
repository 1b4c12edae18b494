//! Judge Agent dialogue with bounded rounds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{DetectionSource, Violation};
use crate::llm::{complete_logged, extract_json, ChatMessage, Exchange, Gateway, StageModel};
use crate::logs::{SemanticEvent, SemanticEventSequence};
use crate::spec::Specification;

pub const JUDGE_PROMPT: &str = include_str!("../../assets/prompts/judge.md");
pub const REVISION_PROMPT: &str = include_str!("../../assets/prompts/failure_revision.md");

/// Events quoted from each end of a long segment.
const QUOTE_EDGE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JudgeDecision {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    /// The finding as it stood when the dialogue ended.
    pub violation: Violation,
    pub decision: JudgeDecision,
    pub rounds_used: u32,
    pub rationale: String,
    /// Rounds ran out while the Judge still disagreed.
    #[serde(default)]
    pub unresolved: bool,
    /// The Failure Agent withdrew the finding.
    #[serde(default)]
    pub withdrawn: bool,
    /// A gateway failure forced the fallback decision.
    #[serde(default)]
    pub degraded: bool,
}

fn quote_event(out: &mut String, e: &SemanticEvent) {
    let _ = match e {
        SemanticEvent::Turn {
            seq,
            agent,
            condensed,
        } => {
            let text = if condensed.sentence_count == 0 {
                "(blank)".to_string()
            } else {
                let mut t = condensed.first_sentence.clone();
                if condensed.sentence_count > 1 {
                    t.push_str(" ... ");
                    t.push_str(&condensed.last_sentence);
                }
                t
            };
            writeln!(out, "[seq {seq}] {agent}: {text}")
        }
        SemanticEvent::Tool {
            seq,
            tool_record: r,
        } => writeln!(
            out,
            "[seq {seq}] {} -> {} status={} arguments={} output={}",
            r.caller,
            r.tool,
            serde_json::to_value(r.status)
                .unwrap_or_default()
                .as_str()
                .unwrap_or("?"),
            r.arguments.prefix,
            r.output.prefix
        ),
        SemanticEvent::Termination { seq, reason } => {
            writeln!(out, "[seq {seq}] termination: {reason}")
        }
    };
}

/// The events inside the finding's segment, elided in the middle when long.
pub(crate) fn quote_segment(v: &Violation, seq: &SemanticEventSequence) -> String {
    let inside: Vec<&SemanticEvent> = seq
        .events
        .iter()
        .filter(|e| v.offending_segment.contains(e.seq()))
        .collect();
    let mut out = String::new();
    if inside.is_empty() {
        out.push_str("(no events in this segment)\n");
    } else if inside.len() <= 2 * QUOTE_EDGE {
        inside.iter().for_each(|e| quote_event(&mut out, e));
    } else {
        inside[..QUOTE_EDGE]
            .iter()
            .for_each(|e| quote_event(&mut out, e));
        let _ = writeln!(
            out,
            "[... {} events elided ...]",
            inside.len() - 2 * QUOTE_EDGE
        );
        inside[inside.len() - QUOTE_EDGE..]
            .iter()
            .for_each(|e| quote_event(&mut out, e));
    }
    let _ = writeln!(
        out,
        "run exit: {}; dead_loop: {}",
        serde_json::to_value(seq.exit)
            .unwrap_or_default()
            .as_str()
            .unwrap_or("?"),
        seq.dead_loop
    );
    out
}

fn finding_text(v: &Violation) -> String {
    format!(
        "type: {}\ncategory: {}\nagent: {}\nsegment: seq {}-{}\ndescription: {}\n",
        v.root_cause,
        v.category,
        v.agent.as_ref().map_or("(none)", |a| a.as_str()),
        v.offending_segment.first_seq,
        v.offending_segment.last_seq,
        v.description
    )
}

fn parse_decision(content: &str) -> Option<(JudgeDecision, String)> {
    if let Ok(doc) = extract_json(content) {
        let d = doc
            .get("decision")
            .and_then(Value::as_str)
            .map(|s| s.trim().to_uppercase());
        let rationale = doc
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        match d.as_deref() {
            Some("CORRECT") => return Some((JudgeDecision::Correct, rationale)),
            Some("INCORRECT") => return Some((JudgeDecision::Incorrect, rationale)),
            _ => {}
        }
    }
    let upper = content.to_uppercase();
    if upper.contains("INCORRECT") {
        Some((JudgeDecision::Incorrect, content.trim().to_string()))
    } else if upper.contains("CORRECT") {
        Some((JudgeDecision::Correct, content.trim().to_string()))
    } else {
        None
    }
}

enum Revision {
    Revise(String),
    Withdraw,
    Keep,
}

fn parse_revision(content: &str) -> Revision {
    let Ok(doc) = extract_json(content) else {
        return Revision::Keep;
    };
    match doc.get("action").and_then(Value::as_str) {
        Some("withdraw") => Revision::Withdraw,
        Some("revise") => match doc
            .get("description")
            .and_then(Value::as_str)
            .map(str::trim)
        {
            Some(d) if !d.is_empty() => Revision::Revise(d.to_string()),
            _ => Revision::Keep,
        },
        _ => Revision::Keep,
    }
}

fn fallback(v: Violation, round: u32, why: String) -> Verdict {
    let decision = match v.source {
        DetectionSource::Mechanical => JudgeDecision::Correct,
        DetectionSource::Llm => JudgeDecision::Incorrect,
    };
    Verdict {
        violation: v,
        decision,
        rounds_used: round,
        rationale: format!("judge unavailable: {why}"),
        unresolved: false,
        withdrawn: false,
        degraded: true,
    }
}

fn adjudicate_one(
    v: &Violation,
    seq: &SemanticEventSequence,
    contract: &str,
    gateway: &Gateway,
    model: &StageModel,
    max_rounds: u32,
    log: &mut Vec<Exchange>,
) -> Verdict {
    let mut current = v.clone();
    let quote = quote_segment(v, seq);
    let mut history = String::new();
    let stage = format!("oracle:judge:{}", v.case_id);
    for round in 1..=max_rounds {
        let user = format!(
            "## Contract\n{contract}\n\n## Reported violation\n{}\n## Log segment\n{quote}{history}",
            finding_text(&current)
        );
        let req = model.request(
            JUDGE_PROMPT.to_string(),
            vec![ChatMessage::user(user)],
            true,
        );
        let (decision, rationale) = match complete_logged(gateway, &stage, req, log) {
            Ok(resp) => match parse_decision(&resp.content) {
                Some(d) => d,
                None => {
                    return fallback(
                        current,
                        round,
                        "answer had no CORRECT/INCORRECT decision".into(),
                    )
                }
            },
            Err(e) => return fallback(current, round, e.to_string()),
        };
        let verdict = |violation, unresolved, withdrawn| Verdict {
            violation,
            decision,
            rounds_used: round,
            rationale: rationale.clone(),
            unresolved,
            withdrawn,
            degraded: false,
        };
        if decision == JudgeDecision::Correct {
            return verdict(current, false, false);
        }
        if round == max_rounds {
            return verdict(current, true, false);
        }
        let user = format!(
            "## Your finding\n{}\n## Reviewer rationale\n{rationale}\n\n## Log segment\n{quote}",
            finding_text(&current)
        );
        let req = model.request(
            REVISION_PROMPT.to_string(),
            vec![ChatMessage::user(user)],
            true,
        );
        let revision = complete_logged(gateway, &format!("oracle:revise:{}", v.case_id), req, log)
            .map(|r| parse_revision(&r.content))
            .unwrap_or(Revision::Keep);
        match revision {
            Revision::Withdraw => return verdict(current, false, true),
            Revision::Revise(d) => current.description = d,
            Revision::Keep => {}
        }
        let _ = write!(history, "\n## Round {round}\nYou answered INCORRECT: {rationale}\nThe finding above is the reporter's reply.\n");
    }
    unreachable!("the final round always returns")
}

/// One bounded dialogue per finding, in order.
pub fn adjudicate(
    violations: &[Violation],
    seq: &SemanticEventSequence,
    spec: &Specification,
    gateway: &Gateway,
    model: &StageModel,
    max_rounds: u32,
    log: &mut Vec<Exchange>,
) -> Vec<Verdict> {
    let max_rounds = max_rounds.max(1);
    let contract = serde_json::to_string_pretty(spec).unwrap_or_default();
    violations
        .iter()
        .map(|v| adjudicate_one(v, seq, &contract, gateway, model, max_rounds, log))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunExit;
    use crate::llm::{MockEntry, ProviderBinding};
    use crate::oracle::{RootCause, Segment};

    fn spec() -> Specification {
        crate::spec::validate_specification(
            &crate::analysis::example_specification(),
            crate::spec::Strictness::Strict,
        )
        .unwrap()
        .value
    }

    fn seq() -> SemanticEventSequence {
        SemanticEventSequence {
            schema_version: crate::logs::SEMANTIC_SCHEMA.into(),
            case_id: "c".into(),
            events: (1..=40)
                .map(|i| SemanticEvent::Turn {
                    seq: i,
                    agent: "director".into(),
                    condensed: crate::logs::condense_utterance("Again."),
                })
                .collect(),
            speaker_order: vec!["director".into(); 40],
            dead_loop: true,
            exit: RunExit::EventCap,
        }
    }

    fn finding(source: DetectionSource) -> Violation {
        Violation::new(
            "c",
            RootCause::RepetitiveExecution,
            None,
            Segment::new(1, 40),
            "loops",
            source,
        )
    }

    fn run(entries: Vec<MockEntry>, source: DetectionSource, max_rounds: u32) -> Verdict {
        let g = Gateway::connect(&ProviderBinding::mock(entries)).unwrap();
        let mut log = Vec::new();
        adjudicate(
            &[finding(source)],
            &seq(),
            &spec(),
            &g,
            &StageModel::default(),
            max_rounds,
            &mut log,
        )
        .remove(0)
    }

    #[test]
    fn agreement_in_round_one() {
        let v = run(
            vec![MockEntry::any(
                r#"{"decision": "CORRECT", "rationale": "yes"}"#,
            )],
            DetectionSource::Llm,
            3,
        );
        assert_eq!(
            (v.decision, v.rounds_used, v.unresolved),
            (JudgeDecision::Correct, 1, false)
        );
    }

    #[test]
    fn exhaustion_is_unresolved() {
        let v = run(
            vec![
                MockEntry::new(
                    "You are the judge agent",
                    r#"{"decision": "INCORRECT", "rationale": "no"}"#,
                )
                .repeating(),
                MockEntry::any(r#"{"action": "revise", "description": "loops forever"}"#),
            ],
            DetectionSource::Llm,
            2,
        );
        assert_eq!(
            (v.decision, v.rounds_used, v.unresolved),
            (JudgeDecision::Incorrect, 2, true)
        );
        assert_eq!(v.violation.description, "loops forever");
    }

    #[test]
    fn withdrawal_ends_dialogue() {
        let v = run(
            vec![
                MockEntry::new(
                    "You are the judge agent",
                    r#"{"decision": "INCORRECT", "rationale": "no"}"#,
                ),
                MockEntry::any(r#"{"action": "withdraw"}"#),
            ],
            DetectionSource::Llm,
            3,
        );
        assert!(v.withdrawn && !v.unresolved);
        assert_eq!(v.rounds_used, 1);
    }

    #[test]
    fn degraded_fallbacks() {
        let down = || vec![MockEntry::failing("*", "offline")];
        let m = run(down(), DetectionSource::Mechanical, 3);
        assert_eq!((m.decision, m.degraded), (JudgeDecision::Correct, true));
        let l = run(down(), DetectionSource::Llm, 3);
        assert_eq!((l.decision, l.degraded), (JudgeDecision::Incorrect, true));
    }

    #[test]
    fn long_segments_are_elided() {
        let q = quote_segment(&finding(DetectionSource::Llm), &seq());
        assert!(q.contains("[... 10 events elided ...]"));
    }

    #[test]
    fn rounds_never_exceed_bound() {
        for max in 1..=4 {
            let v = run(
                vec![MockEntry::any(r#"{"decision": "INCORRECT", "rationale": "no"}"#).repeating()],
                DetectionSource::Llm,
                max,
            );
            assert!(v.rounds_used <= max);
        }
    }
}
