//! The analysis stage: specification agent, space agent and seed-task
//! generation.
//!
//! Every stage runs the same loop: one request, parse and validate, and on
//! failure a single corrective request that quotes the errors back.

mod bundle;
pub mod prompt;

use std::collections::BTreeSet;

use serde_json::{json, Value};
use thiserror::Error;

pub use bundle::{
    fit_to_budget, framework_knowledge, BundleError, SourceBundle, SourceFile, ALLOWED_EXTENSIONS,
    DEFAULT_BUDGET_BYTES, FRAMEWORKS,
};
use prompt::{render, UnresolvedPlaceholder};

use crate::llm::{
    complete_logged, extract_json, ChatMessage, Exchange, Gateway, GatewayError, StageModel,
};
use crate::spec::{
    enumerate_free_form_paths, validate_behavior_space, validate_specification, AgentId,
    BehaviorDef, BehaviorKind, BehaviorSpace, Dependency, ExecutionPathSpace, Path, Pattern,
    Specification, Strictness, SPACE_SCHEMA,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{stage}: gateway failure: {source}")]
    Gateway {
        stage: String,
        source: GatewayError,
        transcript: Vec<Exchange>,
    },
    #[error("{stage}: output rejected twice: {}", .errors.join("; "))]
    InvalidOutput {
        stage: String,
        errors: Vec<String>,
        raw_outputs: Vec<String>,
        transcript: Vec<Exchange>,
    },
    #[error(transparent)]
    Template(#[from] UnresolvedPlaceholder),
    #[error("at least one task description must be requested")]
    NoTasksRequested,
}

impl AnalysisError {
    pub fn transcript(&self) -> &[Exchange] {
        match self {
            AnalysisError::Gateway { transcript, .. }
            | AnalysisError::InvalidOutput { transcript, .. } => transcript,
            _ => &[],
        }
    }
}

/// A stage result together with its warnings and full LLM transcript.
#[derive(Debug, Clone)]
pub struct Extraction<T> {
    pub value: T,
    pub warnings: Vec<String>,
    pub transcript: Vec<Exchange>,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub strictness: Strictness,
    pub model: StageModel,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            strictness: Strictness::Strict,
            model: StageModel::default(),
        }
    }
}

type Parsed<T> = Result<(T, Vec<String>), Vec<String>>;

fn correction_message(errors: &[String]) -> String {
    let mut msg = String::from("Your previous answer could not be used:\n");
    for e in errors {
        msg.push_str("- ");
        msg.push_str(e);
        msg.push('\n');
    }
    msg.push_str("\nReply again with the complete corrected JSON document only.");
    msg
}

fn run_stage<T>(
    gateway: &Gateway,
    stage: &str,
    model: &StageModel,
    system: String,
    user: String,
    parse: impl Fn(&str) -> Parsed<T>,
) -> Result<Extraction<T>, AnalysisError> {
    let mut transcript = Vec::new();
    let mut messages = vec![ChatMessage::user(user)];
    let mut raw_outputs = Vec::new();
    let mut prior_errors: Vec<String> = Vec::new();
    for attempt in 0..2 {
        let req = model.request(system.clone(), messages.clone(), true);
        let content = match complete_logged(gateway, stage, req, &mut transcript) {
            Ok(r) => r.content,
            Err(source) => {
                return Err(AnalysisError::Gateway {
                    stage: stage.to_string(),
                    source,
                    transcript,
                })
            }
        };
        raw_outputs.push(content.clone());
        match parse(&content) {
            Ok((value, mut warnings)) => {
                if attempt > 0 {
                    warnings.insert(
                        0,
                        format!(
                            "first output rejected and corrected: {}",
                            prior_errors.join("; ")
                        ),
                    );
                }
                return Ok(Extraction {
                    value,
                    warnings,
                    transcript,
                });
            }
            Err(errors) => {
                messages.push(ChatMessage::assistant(content));
                messages.push(ChatMessage::user(correction_message(&errors)));
                prior_errors = errors;
            }
        }
    }
    Err(AnalysisError::InvalidOutput {
        stage: stage.to_string(),
        errors: prior_errors,
        raw_outputs,
        transcript,
    })
}

fn input_section(bundle: &SourceBundle) -> Result<String, UnresolvedPlaceholder> {
    let input_spec = if bundle.input_spec.trim().is_empty() {
        "(not documented)"
    } else {
        &bundle.input_spec
    };
    render(
        prompt::INPUT_SECTION,
        &[
            ("framework", &bundle.framework),
            ("framework_knowledge", &bundle.framework_knowledge),
            ("input_spec", input_spec),
            ("source_files", &bundle.render_files()),
        ],
    )
}

fn json_doc(content: &str) -> Result<Value, Vec<String>> {
    extract_json(content).map_err(|e| vec![e.to_string()])
}

/// Runs the specification agent.
pub fn extract_specification(
    bundle: &SourceBundle,
    gateway: &Gateway,
    opts: &AnalysisOptions,
) -> Result<Extraction<Specification>, AnalysisError> {
    let instructions = render(
        prompt::SPECIFICATION_INSTRUCTIONS,
        &[("example", prompt::SHORTSMAKER_SPECIFICATION_EXAMPLE.trim())],
    )?;
    let system = format!("{}\n{}", prompt::REASONING_CHAIN_SECTION, instructions);
    let user = input_section(bundle)?;
    let strictness = opts.strictness;
    let mut out = run_stage(
        gateway,
        "specification",
        &opts.model,
        system,
        user,
        |content| {
            let doc = json_doc(content)?;
            validate_specification(&doc, strictness)
                .map(|v| (v.value, v.warnings))
                .map_err(|errs| errs.iter().map(ToString::to_string).collect())
        },
    )?;
    let meta = &mut out.value.metadata;
    if meta.generator_model.is_none() {
        meta.generator_model = Some(opts.model.model_name.clone());
    }
    if meta.source.is_none() {
        meta.source = bundle.files.first().map(|f| f.path.clone());
    }
    Ok(out)
}

/// Runs the space agent and completes its answer locally.
pub fn extract_behavior_space(
    bundle: &SourceBundle,
    spec: &Specification,
    gateway: &Gateway,
    opts: &AnalysisOptions,
) -> Result<Extraction<BehaviorSpace>, AnalysisError> {
    let spec_json = serde_json::to_string_pretty(spec).expect("specification serializes");
    let instructions = render(
        prompt::SPACE_INSTRUCTIONS,
        &[
            ("specification", &spec_json),
            ("workflow_example", prompt::SHORTSMAKER_SPACE_EXAMPLE.trim()),
            ("free_form_example", prompt::FREE_FORM_SPACE_EXAMPLE.trim()),
        ],
    )?;
    let system = format!("{}\n{}", prompt::REASONING_CHAIN_SECTION, instructions);
    let user = input_section(bundle)?;
    let strictness = opts.strictness;
    run_stage(
        gateway,
        "behavior_space",
        &opts.model,
        system,
        user,
        |content| {
            let doc = json_doc(content)?;
            complete_space(&doc, spec, strictness)
        },
    )
}

fn pattern_name(p: Pattern) -> &'static str {
    match p {
        Pattern::Workflow => "workflow",
        Pattern::FreeForm => "free_form",
    }
}

fn parse_kind(v: Option<&Value>) -> Result<BehaviorKind, String> {
    match v {
        None | Some(Value::Null) => Ok(BehaviorKind::Expected),
        Some(v) => {
            serde_json::from_value(v.clone()).map_err(|_| format!("unknown behavior kind {v}"))
        }
    }
}

fn parse_nodes(v: &Value) -> Option<Vec<AgentId>> {
    let list = match v {
        Value::Array(a) => a,
        Value::Object(o) => o.get("nodes")?.as_array()?,
        _ => return None,
    };
    list.iter().map(|n| n.as_str().map(AgentId::from)).collect()
}

/// Local completion of the space agent's answer.
///
/// Boundary behaviors missing from the answer are appended for every agent,
/// behavior ids are renumbered per agent, and free-form path lists are
/// always recomputed from the dependency constraints.
pub fn complete_space(
    doc: &Value,
    spec: &Specification,
    strictness: Strictness,
) -> Parsed<BehaviorSpace> {
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    let agents = spec.agent_ids();
    let known: BTreeSet<&AgentId> = agents.iter().collect();
    let pattern = spec.relationships.pattern;

    if let Some(p) = doc.get("pattern").and_then(Value::as_str) {
        if p != pattern_name(pattern) {
            errors.push(format!(
                "path-space pattern mismatch: answer says `{p}`, specification says `{}`",
                pattern_name(pattern)
            ));
        }
    }

    let Some(intra) = doc.get("intra").and_then(Value::as_array) else {
        return Err(vec!["missing `intra` behavior list".into()]);
    };
    let mut per_agent: Vec<(AgentId, Vec<(BehaviorKind, String)>)> =
        agents.iter().map(|a| (a.clone(), Vec::new())).collect();
    for (i, item) in intra.iter().enumerate() {
        let Some(agent) = item.get("agent").and_then(Value::as_str).map(AgentId::from) else {
            errors.push(format!("intra[{i}] has no agent"));
            continue;
        };
        if !known.contains(&agent) {
            warnings.push(format!("intra[{i}] names unknown agent `{agent}`; dropped"));
            continue;
        }
        let kind = match parse_kind(item.get("kind")) {
            Ok(k) => k,
            Err(e) => {
                errors.push(format!("intra[{i}]: {e}"));
                continue;
            }
        };
        let description = item
            .get("description")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .trim()
            .to_string();
        per_agent
            .iter_mut()
            .find(|(a, _)| *a == agent)
            .expect("known agent")
            .1
            .push((kind, description));
    }

    let mut defs = Vec::new();
    for (agent, items) in &per_agent {
        let mut expected: Vec<String> = items
            .iter()
            .filter(|(k, _)| *k == BehaviorKind::Expected)
            .map(|(_, d)| d.clone())
            .collect();
        if expected.is_empty() {
            warnings.push(format!(
                "no expected behaviors for `{agent}`; derived from its tasks"
            ));
            expected = spec
                .agent(agent)
                .map(|a| a.tasks.iter().map(|t| t.responsibility.clone()).collect())
                .unwrap_or_default();
            if expected.is_empty() {
                expected.push("takes its turn as instructed".into());
            }
        }
        let mut id = 0;
        for d in expected {
            id += 1;
            defs.push(BehaviorDef {
                behavior_id: id,
                agent: agent.clone(),
                kind: BehaviorKind::Expected,
                description: d,
            });
        }
        for kind in BehaviorKind::BOUNDARY {
            let mut given = items.iter().filter(|(k, _)| *k == kind);
            let description = match given.next() {
                Some((_, d)) if !d.is_empty() => d.clone(),
                _ => kind.default_description().to_string(),
            };
            if given.next().is_some() {
                warnings.push(format!(
                    "`{agent}` lists {kind:?} more than once; extra entries dropped"
                ));
            }
            id += 1;
            defs.push(BehaviorDef {
                behavior_id: id,
                agent: agent.clone(),
                kind,
                description,
            });
        }
    }

    let paths_doc = doc.get("paths").cloned().unwrap_or(Value::Null);
    let max_turns = paths_doc
        .get("max_turns")
        .and_then(Value::as_u64)
        .map(|n| n as u32)
        .or(spec.termination.max_rounds);
    let model_paths: Vec<Vec<AgentId>> = paths_doc
        .get("legal_paths")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(parse_nodes).collect())
        .unwrap_or_default();
    let model_deps: Vec<Dependency> = paths_doc
        .get("dependencies")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|d| serde_json::from_value::<Dependency>(d.clone()).ok())
                .collect()
        })
        .unwrap_or_default();

    let legal_paths =
        match pattern {
            Pattern::Workflow => {
                let order = spec.relationships.fixed_order.clone().unwrap_or_default();
                if let Some(p) = model_paths.iter().find(|p| **p != order) {
                    errors.push(format!(
                    "path-space pattern mismatch: workflow path {} differs from the fixed order {}",
                    Path { nodes: p.clone() },
                    Path { nodes: order.clone() }
                ));
                }
                if !model_deps.is_empty() {
                    warnings.push("dependencies ignored for a workflow system".into());
                }
                vec![Path { nodes: order }]
            }
            Pattern::FreeForm => {
                let mut deps: Vec<Dependency> = spec.relationships.dependencies.clone();
                for d in model_deps {
                    if !known.contains(&d.before) || !known.contains(&d.after) {
                        warnings.push(format!(
                            "dependency {} -> {} names an unknown agent; dropped",
                            d.before, d.after
                        ));
                    } else if !deps.contains(&d) {
                        deps.push(d);
                    }
                }
                match enumerate_free_form_paths(&agents, &deps, max_turns) {
                    Ok(space) => {
                        let legal: BTreeSet<&Vec<AgentId>> =
                            space.legal_paths.iter().map(|p| &p.nodes).collect();
                        for p in model_paths.iter().filter(|p| !legal.contains(p)) {
                            warnings.push(format!(
                                "listed path {} violates the dependencies; dropped",
                                Path { nodes: p.clone() }
                            ));
                        }
                        space.legal_paths
                    }
                    Err(e) => {
                        errors.push(format!("cannot enumerate paths: {e}"));
                        Vec::new()
                    }
                }
            }
        };

    if !errors.is_empty() {
        return Err(errors);
    }
    let space = BehaviorSpace {
        schema_version: SPACE_SCHEMA.to_string(),
        intra: defs,
        paths: ExecutionPathSpace {
            legal_paths,
            max_turns,
        },
    };
    let doc = serde_json::to_value(&space).expect("behavior space serializes");
    match validate_behavior_space(&doc, &agents, strictness) {
        Ok(v) => {
            warnings.extend(v.warnings);
            Ok((v.value, warnings))
        }
        Err(errs) => Err(errs.iter().map(ToString::to_string).collect()),
    }
}

fn parse_tasks(content: &str) -> Result<Vec<String>, String> {
    let doc = extract_json(content).map_err(|e| e.to_string())?;
    let list = match &doc {
        Value::Array(a) => a,
        Value::Object(o) => o
            .get("tasks")
            .and_then(Value::as_array)
            .ok_or("response object has no `tasks` list")?,
        _ => return Err("response is neither an array nor an object".into()),
    };
    Ok(list
        .iter()
        .filter_map(|v| v.as_str().map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect())
}

fn push_distinct(into: &mut Vec<String>, items: Vec<String>) -> usize {
    let mut dupes = 0;
    for t in items {
        if into.contains(&t) {
            dupes += 1;
        } else {
            into.push(t);
        }
    }
    dupes
}

/// Asks for `n` distinct seed task descriptions.
///
/// Duplicates or short answers trigger one follow-up request; anything
/// still missing is filled with numbered variants of the tasks obtained.
pub fn generate_initial_tasks(
    sut_docs: &str,
    n: usize,
    gateway: &Gateway,
    model: &StageModel,
) -> Result<Extraction<Vec<String>>, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::NoTasksRequested);
    }
    let stage = "initial_tasks";
    let system = render(
        prompt::TASK_GENERATION_INSTRUCTIONS,
        &[("count", &n.to_string())],
    )?;
    let docs = if sut_docs.trim().is_empty() {
        "(no documentation)"
    } else {
        sut_docs
    };
    let mut messages = vec![ChatMessage::user(format!(
        "# System documentation\n\n{docs}"
    ))];
    let mut transcript = Vec::new();
    let mut warnings = Vec::new();
    let mut tasks: Vec<String> = Vec::new();

    for attempt in 0..2 {
        let req = model.request(system.clone(), messages.clone(), true);
        let content = complete_logged(gateway, stage, req, &mut transcript).map_err(|source| {
            AnalysisError::Gateway {
                stage: stage.to_string(),
                source,
                transcript: transcript.clone(),
            }
        })?;
        let problem = match parse_tasks(&content.content) {
            Ok(items) => {
                let dupes = push_distinct(&mut tasks, items);
                if dupes > 0 {
                    warnings.push(format!("{dupes} duplicate task(s) dropped"));
                }
                (dupes > 0 || tasks.len() < n)
                    .then(|| format!("{} distinct tasks so far, {n} needed", tasks.len()))
            }
            Err(e) => {
                warnings.push(format!("unparseable task list: {e}"));
                Some(e)
            }
        };
        match problem {
            Some(p) if attempt == 0 && tasks.len() < n => {
                messages.push(ChatMessage::assistant(content.content));
                let have = serde_json::to_string(&tasks).unwrap_or_default();
                messages.push(ChatMessage::user(format!(
                    "{p}. You already gave {have}. Reply with {} more requests, each different from those, \
                     as {{\"tasks\": [...]}}.",
                    n - tasks.len()
                )));
            }
            _ => break,
        }
    }

    tasks.truncate(n);
    if tasks.len() < n {
        warnings.push(format!(
            "padded {} task(s) with numbered variants",
            n - tasks.len()
        ));
        let bases: Vec<String> = if tasks.is_empty() {
            vec!["Carry out the system's main task".to_string()]
        } else {
            tasks.clone()
        };
        let mut k = 0;
        while tasks.len() < n {
            let candidate = format!(
                "{} (variant {})",
                bases[k % bases.len()],
                k / bases.len() + 2
            );
            k += 1;
            if !tasks.contains(&candidate) {
                tasks.push(candidate);
            }
        }
    }
    Ok(Extraction {
        value: tasks,
        warnings,
        transcript,
    })
}

/// The one-shot ShortsMaker specification shipped with the prompts.
pub fn example_specification() -> Value {
    serde_json::from_str(prompt::SHORTSMAKER_SPECIFICATION_EXAMPLE).unwrap_or_else(|_| json!({}))
}
