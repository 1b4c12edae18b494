use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const SPEC_SCHEMA: &str = "flare-spec/1";
pub const SPACE_SCHEMA: &str = "flare-space/1";

/// Agent identity: the `name` attribute of the agent, compared verbatim.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl AsRef<str> for AgentId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// The four-quadrant expected-behavior contract of a system under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specification {
    pub schema_version: String,
    pub agents: Vec<AgentSpec>,
    pub relationships: RelationshipSpec,
    pub termination: TerminationSpec,
    #[serde(default)]
    pub metadata: Metadata,
}

impl Specification {
    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| &a.id == id)
    }

    /// Ordering constraints that govern both matching and sequence legality.
    ///
    /// Workflow systems have no declared dependencies; their fixed order is
    /// turned into a chain so that no two agents of the workflow count as
    /// independent.
    pub fn effective_dependencies(&self) -> Vec<Dependency> {
        match self.relationships.pattern {
            Pattern::FreeForm => self.relationships.dependencies.clone(),
            Pattern::Workflow => self
                .relationships
                .fixed_order
                .as_deref()
                .unwrap_or_default()
                .windows(2)
                .filter(|w| w[0] != w[1])
                .map(|w| Dependency {
                    before: w[0].clone(),
                    after: w[1].clone(),
                })
                .collect(),
        }
    }

    /// The SUT's declared agent arrangement, used as the initial sequence.
    pub fn default_sequence(&self) -> Vec<AgentId> {
        match (&self.relationships.pattern, &self.relationships.fixed_order) {
            (Pattern::Workflow, Some(order)) => {
                let mut seen = Vec::new();
                for a in order {
                    if !seen.contains(a) {
                        seen.push(a.clone());
                    }
                }
                for a in self.agent_ids() {
                    if !seen.contains(&a) {
                        seen.push(a);
                    }
                }
                seen
            }
            _ => self.agent_ids(),
        }
    }
}

/// Free-form provenance of a generated document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub tasks: Vec<TaskExpectation>,
    pub tools: Vec<ToolExpectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExpectation {
    pub task_id: u32,
    pub expected_inputs: String,
    pub expected_outputs: String,
    pub responsibility: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolExpectation {
    pub name: String,
    pub parameters: String,
    /// Agents allowed to invoke the tool. Empty means only the owning agent.
    #[serde(default)]
    pub permitted_callers: Vec<AgentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Workflow,
    FreeForm,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dependency {
    pub before: AgentId,
    pub after: AgentId,
}

impl Dependency {
    pub fn new(before: impl Into<AgentId>, after: impl Into<AgentId>) -> Self {
        Self {
            before: before.into(),
            after: after.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipSpec {
    pub pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_order: Option<Vec<AgentId>>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    Keyword,
    ConditionText,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationSpec {
    pub kind: TerminationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<String>,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
}

/// Intra-agent behaviors plus the execution-path space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpace {
    pub schema_version: String,
    pub intra: Vec<BehaviorDef>,
    pub paths: ExecutionPathSpace,
}

impl BehaviorSpace {
    pub fn behaviors_of<'a>(&'a self, agent: &'a AgentId) -> impl Iterator<Item = &'a BehaviorDef> {
        self.intra.iter().filter(move |b| &b.agent == agent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Expected,
    BoundaryEmptyUtterance,
    BoundaryUnproductiveLoop,
    BoundaryObjectiveDeviation,
}

impl BehaviorKind {
    pub const BOUNDARY: [BehaviorKind; 3] = [
        BehaviorKind::BoundaryEmptyUtterance,
        BehaviorKind::BoundaryUnproductiveLoop,
        BehaviorKind::BoundaryObjectiveDeviation,
    ];

    pub fn is_boundary(self) -> bool {
        self != BehaviorKind::Expected
    }

    pub fn default_description(self) -> &'static str {
        match self {
            BehaviorKind::Expected => "expected task behavior",
            BehaviorKind::BoundaryEmptyUtterance => {
                "produces no valid output for three consecutive turns"
            }
            BehaviorKind::BoundaryUnproductiveLoop => {
                "keeps interacting fruitlessly after the termination condition is met"
            }
            BehaviorKind::BoundaryObjectiveDeviation => {
                "output drifts semantically beyond the assigned scope"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorDef {
    /// Ordinal, scoped to the owning agent (the column of the hit matrix).
    pub behavior_id: u32,
    pub agent: AgentId,
    pub kind: BehaviorKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPathSpace {
    pub legal_paths: Vec<Path>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_turns: Option<u32>,
}

/// An ordered list of agents; each agent is a node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<AgentId>,
}

impl Path {
    pub fn new<I, A>(nodes: I) -> Self
    where
        I: IntoIterator<Item = A>,
        A: Into<AgentId>,
    {
        Self {
            nodes: nodes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(n.as_str())?;
        }
        f.write_str("]")
    }
}
