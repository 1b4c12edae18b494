//! Validation of specification and behavior-space documents.
//!
//! Both validators report every violation they can find instead of stopping
//! at the first one. Structural problems (missing quadrants, unparseable
//! fields) are reported before semantic checks run, because the semantic
//! checks need a typed document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use super::paths::find_cycle;
use super::types::*;

/// Whether unknown fields are errors (`Strict`) or warnings (`Lenient`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaErrorKind {
    #[error("schema_version must be `{expected}`, found {found:?}")]
    SchemaVersion {
        expected: &'static str,
        found: Option<String>,
    },
    #[error("document is not a JSON object")]
    NotAnObject,
    #[error("missing quadrant `{0}`")]
    MissingQuadrant(&'static str),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown field")]
    UnknownField,
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("agent id must be non-empty")]
    EmptyAgentId,
    #[error("duplicate agent id `{0}`")]
    DuplicateAgent(AgentId),
    #[error("dangling agent reference `{0}`")]
    DanglingAgent(AgentId),
    #[error("cyclic dependencies among {0:?}")]
    CyclicDependencies(Vec<AgentId>),
    #[error("workflow pattern requires a non-empty fixed_order")]
    EmptyFixedOrder,
    #[error("workflow pattern must not declare dependencies")]
    WorkflowWithDependencies,
    #[error("free_form pattern must not declare a fixed_order")]
    FreeFormWithFixedOrder,
    #[error("termination kind `keyword` requires a keyword")]
    MissingKeyword,
    #[error("termination kind `max_rounds` requires a positive max_rounds")]
    MissingMaxRounds,
    #[error("task ordinals must be 1..{expected}, found {found:?}")]
    NonContiguousTasks { expected: usize, found: Vec<u32> },
    #[error("duplicate tool name `{0}`")]
    DuplicateTool(String),
    #[error("behavior references unknown agent `{0}`")]
    UnknownBehaviorAgent(AgentId),
    #[error("duplicate behavior id {1} for agent `{0}`")]
    DuplicateBehaviorId(AgentId, u32),
    #[error("behavior ids of agent `{agent}` must be 1..{expected}, found {found:?}")]
    NonContiguousBehaviorIds {
        agent: AgentId,
        expected: usize,
        found: Vec<u32>,
    },
    #[error("empty path")]
    EmptyPath,
    #[error("max_turns must be positive")]
    ZeroMaxTurns,
    #[error("no legal paths")]
    NoLegalPaths,
}

/// One violation, located by a JSON-path-like string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub kind: SchemaErrorKind,
}

impl SchemaError {
    fn new(path: impl Into<String>, kind: SchemaErrorKind) -> Self {
        Self {
            path: path.into(),
            kind,
        }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}: {}", self.path, self.kind)
        }
    }
}

impl std::error::Error for SchemaError {}

/// A validated value plus non-fatal findings (dropped duplicates, ignored
/// fields in lenient mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Validated<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

pub type ValidationResult<T> = Result<Validated<T>, Vec<SchemaError>>;

pub fn validate_specification(
    doc: &Value,
    strictness: Strictness,
) -> ValidationResult<Specification> {
    let mut errors = Vec::new();
    let Some(obj) = doc.as_object() else {
        return Err(vec![SchemaError::new("", SchemaErrorKind::NotAnObject)]);
    };
    check_schema_version(obj, SPEC_SCHEMA, &mut errors);
    for quadrant in ["agents", "relationships", "termination"] {
        if !obj.contains_key(quadrant) {
            errors.push(SchemaError::new(
                quadrant,
                SchemaErrorKind::MissingQuadrant(quadrant),
            ));
        }
    }
    if let Some(agents) = obj.get("agents").and_then(Value::as_array) {
        for (i, a) in agents.iter().enumerate() {
            let Some(a) = a.as_object() else { continue };
            for quadrant in ["tasks", "tools"] {
                if !a.contains_key(quadrant) {
                    errors.push(SchemaError::new(
                        format!("agents[{i}].{quadrant}"),
                        SchemaErrorKind::MissingQuadrant(quadrant),
                    ));
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let (spec, warnings) = deserialize_tracking::<Specification>(doc, strictness, &mut errors);
    let Some(spec) = spec else {
        return Err(errors);
    };
    check_specification(&spec, &mut errors);
    if errors.is_empty() {
        Ok(Validated {
            value: spec,
            warnings,
        })
    } else {
        Err(errors)
    }
}

fn check_specification(spec: &Specification, errors: &mut Vec<SchemaError>) {
    let mut known = BTreeSet::new();
    for (i, agent) in spec.agents.iter().enumerate() {
        let at = format!("agents[{i}]");
        if agent.id.as_str().is_empty() {
            errors.push(SchemaError::new(
                format!("{at}.id"),
                SchemaErrorKind::EmptyAgentId,
            ));
        } else if !known.insert(agent.id.clone()) {
            errors.push(SchemaError::new(
                format!("{at}.id"),
                SchemaErrorKind::DuplicateAgent(agent.id.clone()),
            ));
        }
        let mut ordinals: Vec<u32> = agent.tasks.iter().map(|t| t.task_id).collect();
        ordinals.sort_unstable();
        if !is_one_to_k(&ordinals) {
            errors.push(SchemaError::new(
                format!("{at}.tasks"),
                SchemaErrorKind::NonContiguousTasks {
                    expected: ordinals.len(),
                    found: ordinals,
                },
            ));
        }
        let mut tools = BTreeSet::new();
        for (j, tool) in agent.tools.iter().enumerate() {
            if !tools.insert(tool.name.as_str()) {
                errors.push(SchemaError::new(
                    format!("{at}.tools[{j}].name"),
                    SchemaErrorKind::DuplicateTool(tool.name.clone()),
                ));
            }
        }
    }
    let resolve = |id: &AgentId, path: String, errors: &mut Vec<SchemaError>| {
        if !known.contains(id) {
            errors.push(SchemaError::new(
                path,
                SchemaErrorKind::DanglingAgent(id.clone()),
            ));
        }
    };
    for (i, agent) in spec.agents.iter().enumerate() {
        for (j, tool) in agent.tools.iter().enumerate() {
            for (k, caller) in tool.permitted_callers.iter().enumerate() {
                resolve(
                    caller,
                    format!("agents[{i}].tools[{j}].permitted_callers[{k}]"),
                    errors,
                );
            }
        }
    }

    let rel = &spec.relationships;
    match rel.pattern {
        Pattern::Workflow => {
            match &rel.fixed_order {
                Some(order) if !order.is_empty() => {
                    for (k, id) in order.iter().enumerate() {
                        resolve(id, format!("relationships.fixed_order[{k}]"), errors);
                    }
                }
                _ => errors.push(SchemaError::new(
                    "relationships.fixed_order",
                    SchemaErrorKind::EmptyFixedOrder,
                )),
            }
            if !rel.dependencies.is_empty() {
                errors.push(SchemaError::new(
                    "relationships.dependencies",
                    SchemaErrorKind::WorkflowWithDependencies,
                ));
            }
        }
        Pattern::FreeForm => {
            if rel.fixed_order.is_some() {
                errors.push(SchemaError::new(
                    "relationships.fixed_order",
                    SchemaErrorKind::FreeFormWithFixedOrder,
                ));
            }
        }
    }
    for (k, d) in rel.dependencies.iter().enumerate() {
        resolve(
            &d.before,
            format!("relationships.dependencies[{k}].before"),
            errors,
        );
        resolve(
            &d.after,
            format!("relationships.dependencies[{k}].after"),
            errors,
        );
    }
    if let Some(cycle) = find_cycle(&spec.agent_ids(), &rel.dependencies) {
        errors.push(SchemaError::new(
            "relationships.dependencies",
            SchemaErrorKind::CyclicDependencies(cycle),
        ));
    }

    let term = &spec.termination;
    match term.kind {
        TerminationKind::Keyword if term.keyword.as_deref().is_none_or(str::is_empty) => {
            errors.push(SchemaError::new(
                "termination.keyword",
                SchemaErrorKind::MissingKeyword,
            ));
        }
        TerminationKind::MaxRounds if term.max_rounds.is_none_or(|r| r == 0) => {
            errors.push(SchemaError::new(
                "termination.max_rounds",
                SchemaErrorKind::MissingMaxRounds,
            ));
        }
        _ => {}
    }
}

/// Validates a behavior-space document against the agents of its system.
///
/// Duplicate paths and paths longer than `max_turns` are dropped with a
/// warning rather than rejected.
pub fn validate_behavior_space(
    doc: &Value,
    agents: &[AgentId],
    strictness: Strictness,
) -> ValidationResult<BehaviorSpace> {
    let mut errors = Vec::new();
    let Some(obj) = doc.as_object() else {
        return Err(vec![SchemaError::new("", SchemaErrorKind::NotAnObject)]);
    };
    check_schema_version(obj, SPACE_SCHEMA, &mut errors);
    for key in ["intra", "paths"] {
        if !obj.contains_key(key) {
            errors.push(SchemaError::new(key, SchemaErrorKind::MissingField(key)));
        }
    }
    if let Some(paths) = obj.get("paths").and_then(Value::as_object) {
        if !paths.contains_key("legal_paths") {
            errors.push(SchemaError::new(
                "paths.legal_paths",
                SchemaErrorKind::MissingField("legal_paths"),
            ));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let (space, mut warnings) = deserialize_tracking::<BehaviorSpace>(doc, strictness, &mut errors);
    let Some(mut space) = space else {
        return Err(errors);
    };

    let known: BTreeSet<&AgentId> = agents.iter().collect();
    let mut per_agent: BTreeMap<&AgentId, Vec<u32>> = BTreeMap::new();
    for (i, b) in space.intra.iter().enumerate() {
        if !known.contains(&b.agent) {
            errors.push(SchemaError::new(
                format!("intra[{i}].agent"),
                SchemaErrorKind::UnknownBehaviorAgent(b.agent.clone()),
            ));
            continue;
        }
        let ids = per_agent.entry(&b.agent).or_default();
        if ids.contains(&b.behavior_id) {
            errors.push(SchemaError::new(
                format!("intra[{i}].behavior_id"),
                SchemaErrorKind::DuplicateBehaviorId(b.agent.clone(), b.behavior_id),
            ));
        } else {
            ids.push(b.behavior_id);
        }
    }
    for (agent, ids) in &mut per_agent {
        ids.sort_unstable();
        if !is_one_to_k(ids) {
            errors.push(SchemaError::new(
                "intra",
                SchemaErrorKind::NonContiguousBehaviorIds {
                    agent: (*agent).clone(),
                    expected: ids.len(),
                    found: ids.clone(),
                },
            ));
        }
    }

    if space.paths.max_turns == Some(0) {
        errors.push(SchemaError::new(
            "paths.max_turns",
            SchemaErrorKind::ZeroMaxTurns,
        ));
    }
    let mut kept: Vec<Path> = Vec::with_capacity(space.paths.legal_paths.len());
    for (i, path) in space.paths.legal_paths.iter().enumerate() {
        let at = format!("paths.legal_paths[{i}]");
        if path.is_empty() {
            errors.push(SchemaError::new(at, SchemaErrorKind::EmptyPath));
            continue;
        }
        let mut dangling = false;
        for (k, node) in path.nodes.iter().enumerate() {
            if !known.contains(node) {
                dangling = true;
                errors.push(SchemaError::new(
                    format!("{at}.nodes[{k}]"),
                    SchemaErrorKind::DanglingAgent(node.clone()),
                ));
            }
        }
        if dangling {
            continue;
        }
        if let Some(limit) = space.paths.max_turns.filter(|&m| m > 0) {
            if path.len() > limit as usize {
                warnings.push(format!(
                    "{at}: path {path} has {} nodes, above max_turns={limit}; excluded",
                    path.len()
                ));
                continue;
            }
        }
        if kept.contains(path) {
            warnings.push(format!("{at}: duplicate path {path} dropped"));
            continue;
        }
        kept.push(path.clone());
    }
    if errors.is_empty() && kept.is_empty() {
        errors.push(SchemaError::new(
            "paths.legal_paths",
            SchemaErrorKind::NoLegalPaths,
        ));
    }
    space.paths.legal_paths = kept;

    if errors.is_empty() {
        Ok(Validated {
            value: space,
            warnings,
        })
    } else {
        Err(errors)
    }
}

fn check_schema_version(
    obj: &serde_json::Map<String, Value>,
    expected: &'static str,
    errors: &mut Vec<SchemaError>,
) {
    let found = obj.get("schema_version").and_then(Value::as_str);
    if found != Some(expected) {
        errors.push(SchemaError::new(
            "schema_version",
            SchemaErrorKind::SchemaVersion {
                expected,
                found: found.map(str::to_string),
            },
        ));
    }
}

fn deserialize_tracking<T: DeserializeOwned>(
    doc: &Value,
    strictness: Strictness,
    errors: &mut Vec<SchemaError>,
) -> (Option<T>, Vec<String>) {
    let mut unknown = Vec::new();
    let parsed: Result<T, _> =
        serde_ignored::deserialize(doc, |path| unknown.push(path.to_string()));
    let mut warnings = Vec::new();
    for path in unknown {
        match strictness {
            Strictness::Strict => {
                errors.push(SchemaError::new(path, SchemaErrorKind::UnknownField))
            }
            Strictness::Lenient => warnings.push(format!("{path}: unknown field ignored")),
        }
    }
    match parsed {
        Ok(v) if errors.is_empty() => (Some(v), warnings),
        Ok(_) => (None, warnings),
        Err(e) => {
            errors.push(SchemaError::new(
                "",
                SchemaErrorKind::Malformed(e.to_string()),
            ));
            (None, warnings)
        }
    }
}

fn is_one_to_k(sorted: &[u32]) -> bool {
    sorted.iter().enumerate().all(|(i, &v)| v as usize == i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn shortsmaker() -> Value {
        json!({
            "schema_version": "flare-spec/1",
            "agents": [
                {"id": "script_writer", "tasks": [{"task_id": 1, "expected_inputs": "topic", "expected_outputs": "script", "responsibility": "write the script"}], "tools": []},
                {"id": "voice_actor", "tasks": [{"task_id": 1, "expected_inputs": "script", "expected_outputs": "audio", "responsibility": "narrate"}], "tools": [{"name": "text_to_speech", "parameters": "text: string"}]},
                {"id": "graphic_designer", "tasks": [{"task_id": 1, "expected_inputs": "script", "expected_outputs": "images", "responsibility": "draw"}], "tools": [{"name": "generate_images", "parameters": "prompts: list"}]},
                {"id": "director", "tasks": [
                    {"task_id": 1, "expected_inputs": "audio and images", "expected_outputs": "video", "responsibility": "video generation"},
                    {"task_id": 2, "expected_inputs": "generated video", "expected_outputs": "TERMINATE", "responsibility": "terminating the workflow"}
                ], "tools": [{"name": "generate_video", "parameters": "audio, images"}]}
            ],
            "relationships": {"pattern": "workflow", "fixed_order": ["script_writer", "voice_actor", "graphic_designer", "director"]},
            "termination": {"kind": "keyword", "keyword": "TERMINATE", "description": "director says TERMINATE after the video exists"}
        })
    }

    #[test]
    fn accepts_shortsmaker() {
        let v = validate_specification(&shortsmaker(), Strictness::Strict).unwrap();
        let director = v.value.agent(&"director".into()).unwrap();
        assert_eq!(director.tasks.len(), 2);
        assert!(director.tasks[1].responsibility.contains("terminat"));
    }

    #[test]
    fn reports_cycle() {
        let mut doc = shortsmaker();
        doc["relationships"] = json!({
            "pattern": "free_form",
            "dependencies": [
                {"before": "script_writer", "after": "voice_actor"},
                {"before": "voice_actor", "after": "script_writer"}
            ]
        });
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().contains("cyclic dependencies"));
    }

    #[test]
    fn keyword_without_keyword_is_one_error() {
        let mut doc = shortsmaker();
        doc["termination"] = json!({"kind": "keyword", "description": "ends"});
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        assert_eq!(errs.len(), 1, "{errs:?}");
        assert_eq!(errs[0].kind, SchemaErrorKind::MissingKeyword);
    }

    #[test]
    fn collects_every_violation() {
        let mut doc = shortsmaker();
        doc["relationships"] = json!({"pattern": "workflow", "fixed_order": [], "dependencies": [{"before": "ghost", "after": "director"}]});
        doc["termination"] = json!({"kind": "max_rounds", "description": "cap"});
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        let kinds: Vec<_> = errs.iter().map(|e| &e.kind).collect();
        assert!(kinds.contains(&&SchemaErrorKind::EmptyFixedOrder));
        assert!(kinds.contains(&&SchemaErrorKind::WorkflowWithDependencies));
        assert!(kinds.contains(&&SchemaErrorKind::DanglingAgent("ghost".into())));
        assert!(kinds.contains(&&SchemaErrorKind::MissingMaxRounds));
    }

    #[test]
    fn missing_quadrants_reported_together() {
        let mut doc = shortsmaker();
        let obj = doc.as_object_mut().unwrap();
        obj.remove("termination");
        obj["agents"][0].as_object_mut().unwrap().remove("tools");
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs
            .iter()
            .all(|e| matches!(e.kind, SchemaErrorKind::MissingQuadrant(_))));
    }

    #[test]
    fn unknown_fields_depend_on_strictness() {
        let mut doc = shortsmaker();
        doc["relationships"]["speaker_policy"] = json!("round_robin");
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        assert_eq!(errs[0].kind, SchemaErrorKind::UnknownField);
        assert!(errs[0].path.contains("speaker_policy"));
        let ok = validate_specification(&doc, Strictness::Lenient).unwrap();
        assert_eq!(ok.warnings.len(), 1);
    }

    #[test]
    fn task_ordinals_must_be_contiguous() {
        let mut doc = shortsmaker();
        doc["agents"][3]["tasks"][1]["task_id"] = json!(3);
        let errs = validate_specification(&doc, Strictness::Strict).unwrap_err();
        assert!(matches!(
            errs[0].kind,
            SchemaErrorKind::NonContiguousTasks { .. }
        ));
    }

    fn agents() -> Vec<AgentId> {
        ["S", "V", "G", "D"].map(AgentId::from).to_vec()
    }

    fn space(paths: Value) -> Value {
        json!({
            "schema_version": "flare-space/1",
            "intra": [
                {"behavior_id": 1, "agent": "S", "kind": "expected", "description": "write"},
                {"behavior_id": 2, "agent": "S", "kind": "boundary_empty_utterance", "description": "silent"}
            ],
            "paths": {"legal_paths": paths}
        })
    }

    #[test]
    fn space_with_single_workflow_path() {
        let v = validate_behavior_space(
            &space(json!([{"nodes": ["S", "V", "G", "D"]}])),
            &agents(),
            Strictness::Strict,
        )
        .unwrap();
        assert_eq!(
            v.value.paths.legal_paths,
            vec![Path::new(["S", "V", "G", "D"])]
        );
    }

    #[test]
    fn empty_path_is_error() {
        let errs = validate_behavior_space(
            &space(json!([{"nodes": []}])),
            &agents(),
            Strictness::Strict,
        )
        .unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].to_string(), "paths.legal_paths[0]: empty path");
    }

    #[test]
    fn duplicate_paths_dropped_with_warning() {
        let doc = space(json!([{"nodes": ["S", "V"]}, {"nodes": ["S", "V"]}]));
        let v = validate_behavior_space(&doc, &agents(), Strictness::Strict).unwrap();
        assert_eq!(v.value.paths.legal_paths.len(), 1);
        assert_eq!(v.warnings.len(), 1);
        assert!(v.warnings[0].contains("duplicate"));
    }

    #[test]
    fn behavior_errors() {
        let mut doc = space(json!([{"nodes": ["S"]}]));
        doc["intra"] = json!([
            {"behavior_id": 1, "agent": "X", "kind": "expected", "description": "?"},
            {"behavior_id": 1, "agent": "S", "kind": "expected", "description": "a"},
            {"behavior_id": 1, "agent": "S", "kind": "expected", "description": "b"}
        ]);
        let errs = validate_behavior_space(&doc, &agents(), Strictness::Strict).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert_eq!(
            errs[0].kind,
            SchemaErrorKind::UnknownBehaviorAgent("X".into())
        );
        assert_eq!(
            errs[1].kind,
            SchemaErrorKind::DuplicateBehaviorId("S".into(), 1)
        );
    }

    #[test]
    fn over_long_paths_are_excluded() {
        let mut doc = space(json!([{"nodes": ["S", "V", "G"]}, {"nodes": ["S", "V"]}]));
        doc["paths"]["max_turns"] = json!(2);
        let v = validate_behavior_space(&doc, &agents(), Strictness::Strict).unwrap();
        assert_eq!(v.value.paths.legal_paths, vec![Path::new(["S", "V"])]);
    }
}
