//! A deterministic simulated multi-agent system with fault injection.
//!
//! Each agent in the requested sequence takes one turn: its scripted
//! utterances in order, then its scripted tool call if it has one. The final
//! turn carries the termination keyword. Faults rewrite this stream into the
//! symptom they stand for, optionally only when a trigger on the case's model
//! configuration holds.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    drive, now_ms, Adapter, AdapterLine, DriveEnd, Incoming, RawEvent, RawRunRecord, ResultExit,
    RunExit, RunLimits, TestCase, ToolStatus, RAW_SCHEMA,
};
use crate::spec::{AgentId, Dependency, Pattern};

pub const SCENARIO_SCHEMA: &str = "flare-scenario/1";

/// Text substituted for `{input}` when the case carries the null input.
pub const NULL_INPUT_TEXT: &str = "a topic of your own choosing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    InfiniteLoop,
    EmptyUtterances,
    PrematureTermination,
    ToolOmission,
    ToolError,
    ToolSchemaMismatch,
    OutOfOrderSpeaker,
    OffTaskOutput,
    MaxRoundUnderrun,
}

impl FaultKind {
    pub const ALL: [FaultKind; 9] = [
        FaultKind::InfiniteLoop,
        FaultKind::EmptyUtterances,
        FaultKind::PrematureTermination,
        FaultKind::ToolOmission,
        FaultKind::ToolError,
        FaultKind::ToolSchemaMismatch,
        FaultKind::OutOfOrderSpeaker,
        FaultKind::OffTaskOutput,
        FaultKind::MaxRoundUnderrun,
    ];

    fn targets_tool_user(self) -> bool {
        matches!(
            self,
            FaultKind::ToolOmission | FaultKind::ToolError | FaultKind::ToolSchemaMismatch
        )
    }
}

/// When a fault fires. The agent defaults to the fault's own target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "when", rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    Always,
    TemperatureAtLeast {
        threshold: f64,
        #[serde(default)]
        agent: Option<AgentId>,
    },
    Model {
        model: String,
        #[serde(default)]
        agent: Option<AgentId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub kind: FaultKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    #[serde(default)]
    pub trigger: Trigger,
    /// Replacement text for faults that speak (loop, off-task, premature end).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTool {
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
    #[serde(default)]
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub name: AgentId,
    pub utterances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ScriptedTool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    #[serde(default = "scenario_schema")]
    pub schema_version: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub pattern: Pattern,
    pub agents: Vec<AgentScript>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default = "default_keyword")]
    pub keyword: String,
    #[serde(default)]
    pub faults: Vec<InjectedFault>,
}

fn scenario_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_keyword() -> String {
    "TERMINATE".to_string()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario schema `{0}`")]
    Schema(String),
    #[error("scenario declares no agents")]
    NoAgents,
    #[error("scenario declares agent `{0}` twice")]
    DuplicateAgent(AgentId),
    #[error("scenario references unknown agent `{0}`")]
    UnknownAgent(AgentId),
}

/// A fault that fires for one particular case, with its target resolved.
#[derive(Debug, Clone, PartialEq)]
struct Active {
    kind: FaultKind,
    agent: Option<AgentId>,
    text: Option<String>,
}

impl FaultScenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCENARIO_SCHEMA {
            return Err(ScenarioError::Schema(self.schema_version.clone()));
        }
        if self.agents.is_empty() {
            return Err(ScenarioError::NoAgents);
        }
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            if !seen.insert(&a.name) {
                return Err(ScenarioError::DuplicateAgent(a.name.clone()));
            }
        }
        let refs = self
            .dependencies
            .iter()
            .flat_map(|d| [&d.before, &d.after])
            .chain(self.faults.iter().filter_map(|f| f.agent.as_ref()))
            .chain(self.faults.iter().filter_map(|f| match &f.trigger {
                Trigger::Always => None,
                Trigger::TemperatureAtLeast { agent, .. } | Trigger::Model { agent, .. } => {
                    agent.as_ref()
                }
            }));
        for r in refs {
            if !seen.contains(r) {
                return Err(ScenarioError::UnknownAgent(r.clone()));
            }
        }
        Ok(())
    }

    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.name.clone()).collect()
    }

    pub fn script(&self, agent: &AgentId) -> Option<&AgentScript> {
        self.agents.iter().find(|a| &a.name == agent)
    }

    fn default_target(&self, kind: FaultKind, order: &[AgentId]) -> Option<AgentId> {
        match kind {
            FaultKind::InfiniteLoop => order.last().cloned(),
            FaultKind::EmptyUtterances
            | FaultKind::PrematureTermination
            | FaultKind::OffTaskOutput => order.get(1).or(order.first()).cloned(),
            k if k.targets_tool_user() => order
                .iter()
                .find(|a| self.script(a).is_some_and(|s| s.tool.is_some()))
                .cloned(),
            _ => None,
        }
    }

    fn active_faults(&self, case: &TestCase) -> Vec<Active> {
        self.faults
            .iter()
            .filter_map(|f| {
                let agent = f
                    .agent
                    .clone()
                    .or_else(|| self.default_target(f.kind, &case.sequence));
                let fires = match &f.trigger {
                    Trigger::Always => true,
                    Trigger::TemperatureAtLeast {
                        threshold,
                        agent: a,
                    } => a
                        .as_ref()
                        .or(agent.as_ref())
                        .and_then(|a| case.config.get(a))
                        .is_some_and(|m| m.temperature >= *threshold),
                    Trigger::Model { model, agent: a } => a
                        .as_ref()
                        .or(agent.as_ref())
                        .and_then(|a| case.config.get(a))
                        .is_some_and(|m| &m.model == model),
                };
                fires.then(|| Active {
                    kind: f.kind,
                    agent,
                    text: f.text.clone(),
                })
            })
            .collect()
    }
}

enum Step {
    Utter(AgentId, String),
    Tool {
        agent: AgentId,
        tool: String,
        arguments: Map<String, Value>,
        status: ToolStatus,
        output: String,
    },
    Terminate(String),
    Result(ResultExit, String),
}

fn fires_on(active: &[Active], kind: FaultKind, agent: &AgentId) -> Option<Active> {
    active
        .iter()
        .find(|f| f.kind == kind && f.agent.as_ref() == Some(agent))
        .cloned()
}

fn substitute(text: &str, case: &TestCase, keyword: &str) -> String {
    let input = if case.input.trim().is_empty() {
        NULL_INPUT_TEXT
    } else {
        case.input.as_str()
    };
    text.replace("{input}", input).replace("{keyword}", keyword)
}

/// Builds the finite prefix of the stream and the looping agent, if any.
fn plan(scenario: &FaultScenario, case: &TestCase) -> (Vec<Step>, Option<(AgentId, String)>) {
    let active = scenario.active_faults(case);
    let has = |k: FaultKind| active.iter().any(|f| f.kind == k);
    let kw = scenario.keyword.as_str();

    let mut order = case.sequence.clone();
    if has(FaultKind::OutOfOrderSpeaker) && order.len() >= 2 {
        let last = order.len() - 1;
        let second = if order.len() >= 3 { 1 } else { 0 };
        order.swap(second, last);
    }
    if let Some(unknown) = order.iter().find(|a| scenario.script(a).is_none()) {
        return (
            vec![Step::Result(
                ResultExit::Crash,
                format!("KeyError: no agent named `{unknown}`"),
            )],
            None,
        );
    }

    let mut steps = Vec::new();
    let finish = |steps: &mut Vec<Step>, reason: &str| {
        steps.push(Step::Terminate(reason.to_string()));
        steps.push(Step::Result(ResultExit::Completed, String::new()));
    };
    let max_rounds = case.max_rounds.max(1) as usize;
    for (i, agent) in order.iter().enumerate() {
        if i == max_rounds || (has(FaultKind::MaxRoundUnderrun) && i == 2) {
            finish(&mut steps, "max_rounds_reached");
            return (steps, None);
        }
        let script = scenario.script(agent).expect("checked above");
        let mut lines: Vec<String> = script
            .utterances
            .iter()
            .map(|u| substitute(u, case, kw))
            .collect();
        if fires_on(&active, FaultKind::EmptyUtterances, agent).is_some() {
            lines = vec![String::new(), "   ".into(), "\n".into()];
        }
        if let Some(f) = fires_on(&active, FaultKind::OffTaskOutput, agent) {
            let text = f.text.map(|t| substitute(&t, case, kw)).unwrap_or_else(|| {
                "Unrelated aside: here is my favourite banana bread recipe instead.".into()
            });
            match lines.first_mut() {
                Some(first) => *first = text,
                None => lines.push(text),
            }
        }
        let premature = fires_on(&active, FaultKind::PrematureTermination, agent)
            .filter(|_| i + 1 < order.len());
        let last_turn = i + 1 == order.len();
        if let Some(f) = &premature {
            let text = f
                .text
                .as_deref()
                .map(|t| substitute(t, case, kw))
                .unwrap_or_else(|| format!("That should be enough for everyone. {kw}"));
            lines.push(text);
        } else if last_turn {
            match lines.last_mut() {
                Some(l) if !l.trim().is_empty() => {
                    l.push(' ');
                    l.push_str(kw);
                }
                _ => lines.push(kw.to_string()),
            }
        }
        steps.extend(lines.into_iter().map(|l| Step::Utter(agent.clone(), l)));

        if let Some(tool) = &script.tool {
            if fires_on(&active, FaultKind::ToolOmission, agent).is_none() {
                let mut arguments = substitute_args(&tool.arguments, case, kw);
                if fires_on(&active, FaultKind::ToolSchemaMismatch, agent).is_some() {
                    let raw = Value::Object(arguments).to_string();
                    arguments = Map::from_iter([("raw_payload".to_string(), Value::String(raw))]);
                }
                let (status, output) = if fires_on(&active, FaultKind::ToolError, agent).is_some() {
                    (
                        ToolStatus::Error,
                        format!(
                            "ToolExecutionError: `{}` failed with exit status 1",
                            tool.name
                        ),
                    )
                } else {
                    (ToolStatus::Ok, substitute(&tool.output, case, kw))
                };
                steps.push(Step::Tool {
                    agent: agent.clone(),
                    tool: tool.name.clone(),
                    arguments,
                    status,
                    output,
                });
            }
        }
        if premature.is_some() {
            finish(&mut steps, "keyword");
            return (steps, None);
        }
    }

    if let Some(f) = active.iter().find(|f| f.kind == FaultKind::InfiniteLoop) {
        let agent = f
            .agent
            .clone()
            .or_else(|| order.last().cloned())
            .expect("non-empty order");
        let text = f
            .text
            .as_deref()
            .map(|t| substitute(t, case, kw))
            .unwrap_or_else(|| {
                format!("Shall we wrap up now? The work looks complete. Please confirm. {kw}")
            });
        return (steps, Some((agent, text)));
    }
    finish(&mut steps, "keyword");
    (steps, None)
}

fn substitute_args(args: &Map<String, Value>, case: &TestCase, kw: &str) -> Map<String, Value> {
    args.iter()
        .map(|(k, v)| {
            let v = match v {
                Value::String(s) => Value::String(substitute(s, case, kw)),
                other => other.clone(),
            };
            (k.clone(), v)
        })
        .collect()
}

/// The adapter-protocol lines the simulated system prints for `case`.
///
/// The stream is lazy: an injected infinite loop yields lines forever and the
/// consumer's event cap ends the run.
pub fn sim_run(scenario: &FaultScenario, case: &TestCase) -> impl Iterator<Item = String> {
    let (steps, looping) = plan(scenario, case);
    let tail = looping.into_iter().flat_map(|(agent, text)| {
        std::iter::repeat_with(move || Step::Utter(agent.clone(), text.clone()))
    });
    let mut seq = 0u64;
    steps.into_iter().chain(tail).map(move |step| {
        let line = match step {
            Step::Utter(agent, content) => {
                seq += 1;
                AdapterLine::Event(RawEvent::Utterance {
                    seq,
                    agent,
                    content,
                })
            }
            Step::Tool {
                agent,
                tool,
                arguments,
                status,
                output,
            } => {
                seq += 1;
                AdapterLine::Event(RawEvent::ToolCall {
                    seq,
                    agent,
                    tool,
                    arguments,
                    status,
                    output,
                })
            }
            Step::Terminate(reason) => {
                seq += 1;
                AdapterLine::Event(RawEvent::Termination { seq, reason })
            }
            Step::Result(exit, detail) => AdapterLine::RunResult { exit, detail },
        };
        line.to_line()
    })
}

/// In-process adapter over a [`FaultScenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimAdapter {
    pub scenario: FaultScenario,
}

impl SimAdapter {
    pub fn new(scenario: FaultScenario) -> Self {
        Self { scenario }
    }
}

impl Adapter for SimAdapter {
    fn execute(&self, case: &TestCase, limits: &RunLimits) -> RawRunRecord {
        let started_at_ms = now_ms();
        let deadline = Instant::now() + limits.timeout();
        let mut lines = sim_run(&self.scenario, case);
        let d = drive(
            |deadline| {
                if Instant::now() >= deadline {
                    return Incoming::TimedOut;
                }
                lines.next().map_or(Incoming::Eof, Incoming::Line)
            },
            limits,
            deadline,
        );
        let (exit, detail) = match d.end {
            DriveEnd::Result {
                exit: ResultExit::Completed,
                detail,
            } => (RunExit::Completed, detail),
            DriveEnd::Result {
                exit: ResultExit::Crash,
                detail,
            } => (RunExit::Crash, detail),
            DriveEnd::Eof => (
                RunExit::AdapterError,
                "simulated stream ended without run_result".into(),
            ),
            DriveEnd::Timeout => (RunExit::Timeout, "wall-clock timeout".into()),
            DriveEnd::EventCap => (
                RunExit::EventCap,
                format!("event cap of {} reached", limits.max_events),
            ),
            DriveEnd::Violation { error, .. } => (
                RunExit::AdapterError,
                format!("protocol violation: {error}"),
            ),
        };
        RawRunRecord {
            schema_version: RAW_SCHEMA.to_string(),
            case_id: case.case_id.clone(),
            events: d.events,
            exit,
            detail,
            stderr_tail: String::new(),
            started_at_ms,
            ended_at_ms: now_ms(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ModelConfig;
    use crate::harness::detect_dead_loop;

    fn scenario(faults: Vec<InjectedFault>) -> FaultScenario {
        let agent = |n: &str, tool: Option<&str>| AgentScript {
            name: n.into(),
            utterances: vec![format!("{n} works on {{input}}.")],
            tool: tool.map(|t| ScriptedTool {
                name: t.into(),
                arguments: Map::from_iter([("text".to_string(), Value::String("{input}".into()))]),
                output: "done".into(),
            }),
        };
        FaultScenario {
            schema_version: SCENARIO_SCHEMA.into(),
            name: "t".into(),
            description: String::new(),
            pattern: Pattern::Workflow,
            agents: vec![
                agent("S", None),
                agent("V", Some("tts")),
                agent("G", None),
                agent("D", None),
            ],
            dependencies: vec![],
            keyword: "TERMINATE".into(),
            faults,
        }
    }

    fn fault(kind: FaultKind) -> InjectedFault {
        InjectedFault {
            kind,
            agent: None,
            trigger: Trigger::Always,
            text: None,
        }
    }

    fn case() -> TestCase {
        let agents: Vec<AgentId> = ["S", "V", "G", "D"].map(AgentId::from).to_vec();
        TestCase {
            case_id: "c".into(),
            seed_id: 0,
            parent_seed: None,
            input: "otters".into(),
            config: ModelConfig::uniform(&agents, "gpt-4.1", 0.7),
            sequence: agents,
            max_rounds: 10,
        }
    }

    fn run(faults: Vec<InjectedFault>) -> RawRunRecord {
        SimAdapter::new(scenario(faults)).execute(&case(), &RunLimits::default())
    }

    fn speakers(r: &RawRunRecord) -> Vec<String> {
        r.events
            .iter()
            .filter_map(|e| match e {
                RawEvent::Utterance { agent, .. } => Some(agent.to_string()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn healthy_run() {
        let r = run(vec![]);
        assert_eq!(r.exit, RunExit::Completed);
        assert_eq!(speakers(&r), ["S", "V", "G", "D"]);
        assert!(matches!(
            r.events.last(),
            Some(RawEvent::Termination { .. })
        ));
        assert!(
            matches!(&r.events[0], RawEvent::Utterance { content, .. } if content == "S works on otters.")
        );
    }

    #[test]
    fn stream_is_deterministic() {
        let a: Vec<String> =
            sim_run(&scenario(vec![fault(FaultKind::ToolError)]), &case()).collect();
        let b: Vec<String> =
            sim_run(&scenario(vec![fault(FaultKind::ToolError)]), &case()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_order_puts_director_second() {
        assert_eq!(
            speakers(&run(vec![fault(FaultKind::OutOfOrderSpeaker)])),
            ["S", "D", "G", "V"]
        );
    }

    #[test]
    fn tool_faults() {
        let r = run(vec![fault(FaultKind::ToolError)]);
        assert!(r.events.iter().any(|e| matches!(e,
            RawEvent::ToolCall { status: ToolStatus::Error, output, .. } if !output.is_empty())));
        let r = run(vec![fault(FaultKind::ToolOmission)]);
        assert!(!r
            .events
            .iter()
            .any(|e| matches!(e, RawEvent::ToolCall { .. })));
        let r = run(vec![fault(FaultKind::ToolSchemaMismatch)]);
        assert!(r.events.iter().any(|e| matches!(e,
            RawEvent::ToolCall { arguments, .. } if arguments.contains_key("raw_payload"))));
    }

    #[test]
    fn infinite_loop_hits_event_cap() {
        let r = run(vec![fault(FaultKind::InfiniteLoop)]);
        assert_eq!(r.exit, RunExit::EventCap);
        assert_eq!(r.events.len(), RunLimits::default().max_events);
        assert!(!r.has_termination());
        assert!(detect_dead_loop(&r.events, r.exit, 3));
    }

    #[test]
    fn underrun_and_premature_end_early() {
        let r = run(vec![fault(FaultKind::MaxRoundUnderrun)]);
        assert_eq!(speakers(&r), ["S", "V"]);
        assert!(
            matches!(r.events.last(), Some(RawEvent::Termination { reason, .. }) if reason == "max_rounds_reached")
        );
        let r = run(vec![fault(FaultKind::PrematureTermination)]);
        assert_eq!(speakers(&r), ["S", "V", "V"]);
    }

    #[test]
    fn empty_utterances_are_three_blank_turns() {
        let r = run(vec![fault(FaultKind::EmptyUtterances)]);
        let blanks = r
            .events
            .iter()
            .filter(|e| matches!(e, RawEvent::Utterance { agent, content, .. } if agent.as_str() == "V" && content.trim().is_empty()))
            .count();
        assert_eq!(blanks, 3);
    }

    #[test]
    fn temperature_trigger() {
        let mut f = fault(FaultKind::InfiniteLoop);
        f.trigger = Trigger::TemperatureAtLeast {
            threshold: 1.0,
            agent: None,
        };
        let sc = scenario(vec![f]);
        let adapter = SimAdapter::new(sc);
        assert_eq!(
            adapter.execute(&case(), &RunLimits::default()).exit,
            RunExit::Completed
        );
        let mut hot = case();
        hot.config.get_mut(&"D".into()).unwrap().temperature = 1.3;
        assert_eq!(
            adapter.execute(&hot, &RunLimits::default()).exit,
            RunExit::EventCap
        );
    }

    #[test]
    fn unknown_agent_crashes() {
        let mut c = case();
        c.sequence[0] = "X".into();
        assert_eq!(
            SimAdapter::new(scenario(vec![]))
                .execute(&c, &RunLimits::default())
                .exit,
            RunExit::Crash
        );
    }
}
