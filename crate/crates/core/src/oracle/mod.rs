//! Post-campaign failure identification: detection, adjudication, report.

mod adjudicate;
mod detect;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use adjudicate::{adjudicate, JudgeDecision, Verdict, JUDGE_PROMPT, REVISION_PROMPT};
pub use detect::{
    classify_type, detect, mechanical_violations, render_log_bundle, Detection, DETECTION_PROMPT,
};
pub use report::{
    emit_report, normalize_description, render_markdown, CampaignMeta, ConfirmedEntry,
    FailureReport, Occurrence, RejectedEntry, ReportSummary, RuntimeCrash, FAILURES_SCHEMA,
};

use crate::spec::AgentId;

pub const DEFAULT_MAX_ROUNDS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    TaskExecution,
    ToolInvocation,
    AgentRelationships,
    SystemTermination,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::TaskExecution,
        Category::ToolInvocation,
        Category::AgentRelationships,
        Category::SystemTermination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::TaskExecution => "task_execution",
            Category::ToolInvocation => "tool_invocation",
            Category::AgentRelationships => "agent_relationships",
            Category::SystemTermination => "system_termination",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Root-cause subtypes; each belongs to exactly one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootCause {
    PromptInstructionDeviation,
    ResponseOmission,
    MalformedOutput,
    RepetitiveExecution,
    RoleMisalignment,
    ExplicitRefusal,
    ToolOmission,
    ToolExecutionError,
    ToolSchemaMismatch,
    SpeakingOrderViolation,
    TerminationConditionViolation,
    MaxRoundExceeded,
}

impl RootCause {
    pub const ALL: [RootCause; 12] = [
        RootCause::PromptInstructionDeviation,
        RootCause::ResponseOmission,
        RootCause::MalformedOutput,
        RootCause::RepetitiveExecution,
        RootCause::RoleMisalignment,
        RootCause::ExplicitRefusal,
        RootCause::ToolOmission,
        RootCause::ToolExecutionError,
        RootCause::ToolSchemaMismatch,
        RootCause::SpeakingOrderViolation,
        RootCause::TerminationConditionViolation,
        RootCause::MaxRoundExceeded,
    ];

    pub fn category(self) -> Category {
        use RootCause::*;
        match self {
            PromptInstructionDeviation
            | ResponseOmission
            | MalformedOutput
            | RepetitiveExecution
            | RoleMisalignment
            | ExplicitRefusal => Category::TaskExecution,
            ToolOmission | ToolExecutionError | ToolSchemaMismatch => Category::ToolInvocation,
            SpeakingOrderViolation => Category::AgentRelationships,
            TerminationConditionViolation | MaxRoundExceeded => Category::SystemTermination,
        }
    }

    pub fn as_str(self) -> &'static str {
        use RootCause::*;
        match self {
            PromptInstructionDeviation => "prompt_instruction_deviation",
            ResponseOmission => "response_omission",
            MalformedOutput => "malformed_output",
            RepetitiveExecution => "repetitive_execution",
            RoleMisalignment => "role_misalignment",
            ExplicitRefusal => "explicit_refusal",
            ToolOmission => "tool_omission",
            ToolExecutionError => "tool_execution_error",
            ToolSchemaMismatch => "tool_schema_mismatch",
            SpeakingOrderViolation => "speaking_order_violation",
            TerminationConditionViolation => "termination_condition_violation",
            MaxRoundExceeded => "max_round_exceeded",
        }
    }
}

impl fmt::Display for RootCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    Mechanical,
    Llm,
}

/// Inclusive range of event sequence numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub first_seq: u64,
    pub last_seq: u64,
}

impl Segment {
    pub fn new(a: u64, b: u64) -> Self {
        Self {
            first_seq: a.min(b),
            last_seq: a.max(b),
        }
    }

    pub fn contains(&self, seq: u64) -> bool {
        (self.first_seq..=self.last_seq).contains(&seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub case_id: String,
    pub category: Category,
    pub root_cause: RootCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    pub offending_segment: Segment,
    pub description: String,
    pub source: DetectionSource,
}

impl Violation {
    pub fn new(
        case_id: impl Into<String>,
        root_cause: RootCause,
        agent: Option<AgentId>,
        segment: Segment,
        description: impl Into<String>,
        source: DetectionSource,
    ) -> Self {
        Self {
            case_id: case_id.into(),
            category: root_cause.category(),
            root_cause,
            agent,
            offending_segment: segment,
            description: description.into(),
            source,
        }
    }

    /// Premature-termination findings can only come from the LLM and rest
    /// on its reading of the completion criteria.
    pub fn lower_confidence(&self) -> bool {
        self.source == DetectionSource::Llm
            && self.root_cause == RootCause::TerminationConditionViolation
    }
}
