//! `failures.json` and its markdown companion.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Category, DetectionSource, JudgeDecision, RootCause, Segment, Verdict};
use crate::harness::RunExit;
use crate::spec::AgentId;

pub const FAILURES_SCHEMA: &str = "flare-failures/1";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub campaign_id: String,
    pub runs_analyzed: usize,
    /// Runs whose Failure Agent call failed.
    #[serde(default)]
    pub degraded_runs: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub case_id: String,
    pub segment: Segment,
    pub source: DetectionSource,
    pub rounds_used: u32,
    pub rationale: String,
    #[serde(default)]
    pub unresolved: bool,
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmedEntry {
    pub category: Category,
    pub root_cause: RootCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub description: String,
    #[serde(default)]
    pub lower_confidence: bool,
    pub occurrences: Vec<Occurrence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedEntry {
    pub case_id: String,
    pub category: Category,
    pub root_cause: RootCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub description: String,
    pub rationale: String,
    pub rounds_used: u32,
    #[serde(default)]
    pub unresolved: bool,
    #[serde(default)]
    pub withdrawn: bool,
    #[serde(default)]
    pub degraded: bool,
}

/// A run that crashed or broke the harness protocol; kept apart from the
/// four categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeCrash {
    pub case_id: String,
    pub exit: RunExit,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub per_category: BTreeMap<Category, usize>,
    pub per_root_cause: BTreeMap<RootCause, usize>,
    pub confirmed: usize,
    pub rejected: usize,
    pub runtime_crashes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub schema_version: String,
    pub campaign_id: String,
    pub runs_analyzed: usize,
    pub degraded: bool,
    pub confirmed: Vec<ConfirmedEntry>,
    pub rejected: Vec<RejectedEntry>,
    pub runtime_crashes: Vec<RuntimeCrash>,
    pub summary: ReportSummary,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Lowercase, whitespace collapsed, trailing punctuation dropped.
pub fn normalize_description(d: &str) -> String {
    d.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .trim_end_matches(['.', '!', '?', ';', ':'])
        .to_string()
}

type DedupKey = (Category, RootCause, Option<AgentId>, String);

/// Deduplicates confirmed verdicts in first-seen order and counts them.
pub fn emit_report(
    meta: &CampaignMeta,
    verdicts: &[Verdict],
    crashes: Vec<RuntimeCrash>,
) -> FailureReport {
    let mut confirmed: Vec<ConfirmedEntry> = Vec::new();
    let mut index: BTreeMap<DedupKey, usize> = BTreeMap::new();
    let mut rejected = Vec::new();
    for v in verdicts {
        let f = &v.violation;
        if v.decision == JudgeDecision::Incorrect {
            rejected.push(RejectedEntry {
                case_id: f.case_id.clone(),
                category: f.category,
                root_cause: f.root_cause,
                agent: f.agent.clone(),
                description: f.description.clone(),
                rationale: v.rationale.clone(),
                rounds_used: v.rounds_used,
                unresolved: v.unresolved,
                withdrawn: v.withdrawn,
                degraded: v.degraded,
            });
            continue;
        }
        let occurrence = Occurrence {
            case_id: f.case_id.clone(),
            segment: f.offending_segment,
            source: f.source,
            rounds_used: v.rounds_used,
            rationale: v.rationale.clone(),
            unresolved: v.unresolved,
            degraded: v.degraded,
        };
        let key = (
            f.category,
            f.root_cause,
            f.agent.clone(),
            normalize_description(&f.description),
        );
        match index.get(&key) {
            Some(&i) => {
                let e = &mut confirmed[i];
                e.lower_confidence &= f.lower_confidence();
                e.occurrences.push(occurrence);
            }
            None => {
                index.insert(key, confirmed.len());
                confirmed.push(ConfirmedEntry {
                    category: f.category,
                    root_cause: f.root_cause,
                    agent: f.agent.clone(),
                    description: f.description.clone(),
                    lower_confidence: f.lower_confidence(),
                    occurrences: vec![occurrence],
                });
            }
        }
    }
    let mut per_category: BTreeMap<Category, usize> =
        Category::ALL.iter().map(|c| (*c, 0)).collect();
    let mut per_root_cause: BTreeMap<RootCause, usize> = BTreeMap::new();
    for e in &confirmed {
        *per_category.entry(e.category).or_default() += 1;
        *per_root_cause.entry(e.root_cause).or_default() += 1;
    }
    FailureReport {
        schema_version: FAILURES_SCHEMA.to_string(),
        campaign_id: meta.campaign_id.clone(),
        runs_analyzed: meta.runs_analyzed,
        degraded: !meta.degraded_runs.is_empty() || verdicts.iter().any(|v| v.degraded),
        summary: ReportSummary {
            per_category,
            per_root_cause,
            confirmed: confirmed.len(),
            rejected: rejected.len(),
            runtime_crashes: crashes.len(),
        },
        confirmed,
        rejected,
        runtime_crashes: crashes,
        warnings: meta.warnings.clone(),
    }
}

pub fn render_markdown(r: &FailureReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Failure report: {}\n", r.campaign_id);
    let _ = writeln!(
        out,
        "{} runs analyzed, {} confirmed failures, {} rejected findings, {} runtime crashes.",
        r.runs_analyzed, r.summary.confirmed, r.summary.rejected, r.summary.runtime_crashes
    );
    if r.degraded {
        let _ = writeln!(
            out,
            "\nSome LLM calls failed; affected runs carry mechanical findings only or fallback verdicts."
        );
    }
    let _ = writeln!(out, "\n| Category | Confirmed |\n|---|---|");
    for (c, n) in &r.summary.per_category {
        let _ = writeln!(out, "| {c} | {n} |");
    }
    if !r.confirmed.is_empty() {
        let _ = writeln!(out, "\n## Confirmed");
    }
    for (i, e) in r.confirmed.iter().enumerate() {
        let agent = e
            .agent
            .as_ref()
            .map_or(String::new(), |a| format!(" ({a})"));
        let _ = writeln!(
            out,
            "\n### {}. {} / {}{agent}\n",
            i + 1,
            e.category,
            e.root_cause
        );
        let _ = writeln!(out, "{}\n", e.description);
        if e.lower_confidence {
            let _ = writeln!(
                out,
                "Lower confidence: whether a run ended too early depends on the LLM's reading of the completion criteria.\n"
            );
        }
        for o in &e.occurrences {
            let mut flags = vec![match o.source {
                DetectionSource::Mechanical => "mechanical",
                DetectionSource::Llm => "llm",
            }];
            if o.unresolved {
                flags.push("unresolved");
            }
            if o.degraded {
                flags.push("degraded");
            }
            let _ = writeln!(
                out,
                "- `{}` seq {}-{} [{}], {} round(s): {}",
                o.case_id,
                o.segment.first_seq,
                o.segment.last_seq,
                flags.join(", "),
                o.rounds_used,
                o.rationale
            );
        }
    }
    if !r.rejected.is_empty() {
        let _ = writeln!(out, "\n## Rejected\n");
        for e in &r.rejected {
            let _ = writeln!(
                out,
                "- `{}` {} / {}: {} (judge: {})",
                e.case_id, e.category, e.root_cause, e.description, e.rationale
            );
        }
    }
    if !r.runtime_crashes.is_empty() {
        let _ = writeln!(out, "\n## Runtime crashes\n");
        for c in &r.runtime_crashes {
            let exit = serde_json::to_value(c.exit).unwrap_or_default();
            let _ = writeln!(
                out,
                "- `{}` {}: {}",
                c.case_id,
                exit.as_str().unwrap_or("?"),
                c.detail
            );
        }
    }
    if !r.warnings.is_empty() {
        let _ = writeln!(out, "\n## Warnings\n");
        for w in &r.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Violation;

    fn verdict(case: &str, desc: &str, decision: JudgeDecision) -> Verdict {
        Verdict {
            violation: Violation::new(
                case,
                RootCause::ToolOmission,
                Some("voice_actor".into()),
                Segment::new(2, 2),
                desc,
                DetectionSource::Llm,
            ),
            decision,
            rounds_used: 1,
            rationale: "seen".into(),
            unresolved: false,
            withdrawn: false,
            degraded: false,
        }
    }

    #[test]
    fn dedupe_by_normalized_key() {
        let vs = [
            verdict("a", "Voice actor skipped TTS.", JudgeDecision::Correct),
            verdict("b", "voice actor   skipped tts", JudgeDecision::Correct),
            verdict("c", "Voice actor skipped TTS", JudgeDecision::Correct),
        ];
        let r = emit_report(&CampaignMeta::default(), &vs, Vec::new());
        assert_eq!(r.confirmed.len(), 1);
        assert_eq!(r.confirmed[0].occurrences.len(), 3);
        assert_eq!(r.summary.per_category[&Category::ToolInvocation], 1);
        assert_eq!(r.summary.confirmed, 1);
    }

    #[test]
    fn rejected_keep_rationale() {
        let vs = [
            verdict("a", "x", JudgeDecision::Correct),
            verdict("b", "y", JudgeDecision::Incorrect),
        ];
        let r = emit_report(&CampaignMeta::default(), &vs, Vec::new());
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].rationale, "seen");
    }

    #[test]
    fn empty_report_is_well_formed() {
        let r = emit_report(&CampaignMeta::default(), &[], Vec::new());
        assert_eq!(r.summary.per_category.len(), 4);
        assert!(r.summary.per_category.values().all(|n| *n == 0));
        let back: FailureReport =
            serde_json::from_value(serde_json::to_value(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(render_markdown(&r).contains("0 confirmed failures"));
    }

    #[test]
    fn counts_match_lists() {
        let vs: Vec<Verdict> = (0..6)
            .map(|i| {
                verdict(
                    &i.to_string(),
                    &format!("d{}", i % 3),
                    if i == 5 {
                        JudgeDecision::Incorrect
                    } else {
                        JudgeDecision::Correct
                    },
                )
            })
            .collect();
        let r = emit_report(&CampaignMeta::default(), &vs, Vec::new());
        assert_eq!(r.summary.confirmed, r.confirmed.len());
        assert_eq!(
            r.summary.per_category.values().sum::<usize>(),
            r.confirmed.len()
        );
        assert_eq!(r.summary.rejected, r.rejected.len());
    }
}
