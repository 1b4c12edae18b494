//! Trace relaxation and legal-path matching.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::logs::{SemanticEvent, SemanticEventSequence};
use crate::spec::{AgentId, DependencyClosure, ExecutionPathSpace};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "agent", rename_all = "snake_case")]
pub enum TraceNode {
    Turn(AgentId),
    Tool(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxRule {
    MergeConsecutive,
    InlineTool,
    ReorderIndependent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTrace {
    pub nodes: Vec<AgentId>,
    /// Rules that changed the trace, in application order.
    pub applied_rules: Vec<RelaxRule>,
}

/// Chronological turn and tool nodes of a semantic sequence.
pub fn trace_of(seq: &SemanticEventSequence) -> Vec<TraceNode> {
    seq.events
        .iter()
        .filter_map(|e| match e {
            SemanticEvent::Turn { agent, .. } => Some(TraceNode::Turn(agent.clone())),
            SemanticEvent::Tool { tool_record, .. } => {
                Some(TraceNode::Tool(tool_record.caller.clone()))
            }
            SemanticEvent::Termination { .. } => None,
        })
        .collect()
}

/// Inlines tool events into their caller's turn, then merges runs of the
/// same agent. Never reorders.
pub fn relax_trace(trace: &[TraceNode]) -> CanonicalTrace {
    let mut applied_rules = Vec::new();
    let turns: Vec<&AgentId> = trace
        .iter()
        .filter_map(|n| match n {
            TraceNode::Turn(a) => Some(a),
            TraceNode::Tool(_) => None,
        })
        .collect();
    if turns.len() != trace.len() {
        applied_rules.push(RelaxRule::InlineTool);
    }
    let turn_count = turns.len();
    let mut nodes: Vec<AgentId> = Vec::with_capacity(turn_count);
    for a in turns {
        if nodes.last() != Some(a) {
            nodes.push(a.clone());
        }
    }
    if nodes.len() != turn_count {
        applied_rules.push(RelaxRule::MergeConsecutive);
    }
    CanonicalTrace {
        nodes,
        applied_rules,
    }
}

/// True when `a` and `b` are equal up to swapping adjacent, mutually
/// independent agents.
///
/// Uses the projection characterization: two words are equivalent under such
/// swaps iff their projections onto every pair of dependent letters (each
/// letter counts as dependent on itself) coincide.
pub fn equivalent_under_independence(
    a: &[AgentId],
    b: &[AgentId],
    deps: &DependencyClosure,
) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let letters: BTreeSet<&AgentId> = a.iter().chain(b).collect();
    let letters: Vec<&AgentId> = letters.into_iter().collect();
    for (i, x) in letters.iter().enumerate() {
        for y in &letters[i..] {
            if x != y && deps.independent(x, y) {
                continue;
            }
            let project = |w: &[AgentId]| -> Vec<AgentId> {
                w.iter().filter(|n| *n == *x || *n == *y).cloned().collect()
            };
            if project(a) != project(b) {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathMatch {
    pub index: usize,
    pub reordered: bool,
}

/// Lowest-index exact match, else lowest-index match up to independent
/// adjacent swaps.
pub fn match_path(
    trace: &CanonicalTrace,
    space: &ExecutionPathSpace,
    deps: &DependencyClosure,
) -> Option<PathMatch> {
    if let Some(index) = space
        .legal_paths
        .iter()
        .position(|p| p.nodes == trace.nodes)
    {
        return Some(PathMatch {
            index,
            reordered: false,
        });
    }
    space
        .legal_paths
        .iter()
        .position(|p| equivalent_under_independence(&trace.nodes, &p.nodes, deps))
        .map(|index| PathMatch {
            index,
            reordered: true,
        })
}
