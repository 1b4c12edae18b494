//! The shipped ShortsMaker fixtures and the offline demo.
//!
//! Everything here runs against the simulated system and the scripted mock
//! gateway, so it needs neither network access nor API keys.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    extract_behavior_space, extract_specification, generate_initial_tasks, AnalysisError,
    AnalysisOptions, BundleError, SourceBundle, DEFAULT_BUDGET_BYTES,
};
use crate::campaign::{
    run_campaign, AdapterConfig, Budget, CampaignConfig, CampaignError, CampaignResult, LlmRoles,
    RoleBinding,
};
use crate::corpus::ModelConfig;
use crate::harness::sim::{FaultKind, FaultScenario, SimAdapter};
use crate::harness::{Adapter, RawRunRecord, RunLimits, TestCase};
use crate::llm::{Gateway, MockBinding, MockEntry, ProviderBinding};
use crate::logs::{build_event_sequence, SemanticEventSequence};
use crate::spec::{
    validate_behavior_space, validate_specification, BehaviorSpace, Pattern, Specification,
    Strictness,
};

pub const WORKFLOW_SPECIFICATION: &str =
    include_str!("../assets/demo/shortsmaker_workflow/specification.json");
pub const WORKFLOW_SPACE: &str =
    include_str!("../assets/demo/shortsmaker_workflow/behavior_space.json");
pub const FREE_FORM_SPECIFICATION: &str =
    include_str!("../assets/demo/shortsmaker_free_form/specification.json");
pub const FREE_FORM_SPACE: &str =
    include_str!("../assets/demo/shortsmaker_free_form/behavior_space.json");

pub const ANALYSIS_MOCK: &str = include_str!("../assets/demo/mock/analysis.json");
pub const COVERAGE_MOCK: &str = include_str!("../assets/demo/mock/coverage.json");
pub const ORACLE_MOCK: &str = include_str!("../assets/demo/mock/oracle.json");

/// The toy system analyzed by the demo.
pub const SUT_FILES: [(&str, &str); 3] = [
    ("README.md", include_str!("../assets/demo/sut/README.md")),
    ("app.py", include_str!("../assets/demo/sut/app.py")),
    ("tools.py", include_str!("../assets/demo/sut/tools.py")),
];

/// Scenario corpus: two healthy systems, one scenario per fault kind, and
/// the demo system.
pub const SCENARIOS: [(&str, &str); 12] = [
    (
        "healthy_workflow",
        include_str!("../assets/demo/scenarios/healthy_workflow.json"),
    ),
    (
        "healthy_free_form",
        include_str!("../assets/demo/scenarios/healthy_free_form.json"),
    ),
    (
        "fault_infinite_loop",
        include_str!("../assets/demo/scenarios/fault_infinite_loop.json"),
    ),
    (
        "fault_empty_utterances",
        include_str!("../assets/demo/scenarios/fault_empty_utterances.json"),
    ),
    (
        "fault_premature_termination",
        include_str!("../assets/demo/scenarios/fault_premature_termination.json"),
    ),
    (
        "fault_tool_omission",
        include_str!("../assets/demo/scenarios/fault_tool_omission.json"),
    ),
    (
        "fault_tool_error",
        include_str!("../assets/demo/scenarios/fault_tool_error.json"),
    ),
    (
        "fault_tool_schema_mismatch",
        include_str!("../assets/demo/scenarios/fault_tool_schema_mismatch.json"),
    ),
    (
        "fault_out_of_order_speaker",
        include_str!("../assets/demo/scenarios/fault_out_of_order_speaker.json"),
    ),
    (
        "fault_off_task_output",
        include_str!("../assets/demo/scenarios/fault_off_task_output.json"),
    ),
    (
        "fault_max_round_underrun",
        include_str!("../assets/demo/scenarios/fault_max_round_underrun.json"),
    ),
    (
        "demo_free_form",
        include_str!("../assets/demo/scenarios/demo_free_form.json"),
    ),
];

pub const DEMO_SCENARIO: &str = "demo_free_form";
pub const DEMO_ITERATIONS: u64 = 20;
pub const DEMO_RNG_SEED: u64 = 1;

pub fn scenario(name: &str) -> Option<FaultScenario> {
    SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| FaultScenario::from_json(text).expect("shipped scenario is valid"))
}

/// The single-fault scenario for `kind`.
pub fn fault_scenario(kind: FaultKind) -> FaultScenario {
    let name = format!(
        "fault_{}",
        serde_json::to_value(kind)
            .expect("kind serializes")
            .as_str()
            .unwrap_or_default()
    );
    scenario(&name).expect("one scenario per fault kind")
}

pub fn mock_entries(script: &str) -> Vec<MockEntry> {
    serde_json::from_str(script).expect("shipped mock script is valid")
}

pub fn mock_gateway(script: &str) -> Gateway {
    Gateway::connect(&ProviderBinding::mock(mock_entries(script))).expect("mock gateway connects")
}

fn spec_of(text: &str) -> Specification {
    let doc = serde_json::from_str(text).expect("shipped specification is JSON");
    validate_specification(&doc, Strictness::Strict)
        .expect("shipped specification is valid")
        .value
}

fn space_of(text: &str, spec: &Specification) -> BehaviorSpace {
    let doc = serde_json::from_str(text).expect("shipped space is JSON");
    validate_behavior_space(&doc, &spec.agent_ids(), Strictness::Strict)
        .expect("shipped space is valid")
        .value
}

pub fn workflow_specification() -> Specification {
    spec_of(WORKFLOW_SPECIFICATION)
}

pub fn workflow_space() -> BehaviorSpace {
    space_of(WORKFLOW_SPACE, &workflow_specification())
}

pub fn free_form_specification() -> Specification {
    spec_of(FREE_FORM_SPECIFICATION)
}

pub fn free_form_space() -> BehaviorSpace {
    space_of(FREE_FORM_SPACE, &free_form_specification())
}

/// The initial seed's test case: default configuration and sequence.
pub fn default_case(spec: &Specification, case_id: &str, input: &str) -> TestCase {
    let agents = spec.default_sequence();
    TestCase {
        case_id: case_id.into(),
        seed_id: 0,
        parent_seed: None,
        input: input.into(),
        config: ModelConfig::uniform(&agents, "gpt-4.1", 0.7),
        sequence: agents,
        max_rounds: spec.termination.max_rounds.unwrap_or(12),
    }
}

/// One simulated run, raw and distilled.
pub fn run_once(
    scenario: &FaultScenario,
    case: &TestCase,
    limits: &RunLimits,
) -> (RawRunRecord, SemanticEventSequence) {
    let raw = SimAdapter::new(scenario.clone()).execute(case, limits);
    let semantic = build_event_sequence(&raw, limits);
    (raw, semantic)
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("no shipped scenario named `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub out: PathBuf,
    pub rng_seed: u64,
    pub iterations: u64,
}

impl DemoOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            rng_seed: DEMO_RNG_SEED,
            iterations: DEMO_ITERATIONS,
        }
    }
}

#[derive(Debug)]
pub struct DemoOutcome {
    pub analysis_warnings: Vec<String>,
    pub campaign: CampaignResult,
}

fn write(path: &Path, text: &str) -> Result<(), DemoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| DemoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| DemoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

fn file_mock(path: PathBuf) -> RoleBinding {
    RoleBinding {
        provider: ProviderBinding::ScriptedMock(MockBinding {
            script: Vec::new(),
            script_file: Some(path),
        }),
        ..RoleBinding::default()
    }
}

/// A campaign on a shipped scenario under `dir`: fixtures go to
/// `dir/fixtures`, the campaign tree to `dir/out`. The coverage and oracle
/// roles use the shipped scripted mocks.
pub fn scenario_campaign(
    dir: &Path,
    scenario: &str,
    pattern: Pattern,
    iterations: u64,
    rng_seed: u64,
) -> Result<CampaignConfig, DemoError> {
    let fixtures = dir.join("fixtures");
    let (_, scenario_text) = SCENARIOS
        .iter()
        .find(|(n, _)| *n == scenario)
        .ok_or_else(|| DemoError::UnknownScenario(scenario.to_string()))?;
    let (spec, space) = match pattern {
        Pattern::Workflow => (WORKFLOW_SPECIFICATION, WORKFLOW_SPACE),
        Pattern::FreeForm => (FREE_FORM_SPECIFICATION, FREE_FORM_SPACE),
    };
    for (name, body) in [
        ("specification.json", spec),
        ("behavior_space.json", space),
        ("scenario.json", *scenario_text),
        ("mock_coverage.json", COVERAGE_MOCK),
        ("mock_oracle.json", ORACLE_MOCK),
        ("tasks.json", SCENARIO_TASKS),
    ] {
        write(&fixtures.join(name), body)?;
    }
    Ok(CampaignConfig {
        out: dir.join("out"),
        specification: fixtures.join("specification.json"),
        behavior_space: fixtures.join("behavior_space.json"),
        tasks: Some(fixtures.join("tasks.json")),
        budget: Budget {
            max_iterations: iterations,
            max_wall_clock_secs: None,
        },
        rng_seed,
        adapter: AdapterConfig {
            scenario: Some(fixtures.join("scenario.json")),
            ..AdapterConfig::default()
        },
        llm: LlmRoles {
            coverage: file_mock(fixtures.join("mock_coverage.json")),
            oracle: file_mock(fixtures.join("mock_oracle.json")),
            ..LlmRoles::default()
        },
        ..CampaignConfig::default()
    })
}

const SCENARIO_TASKS: &str = "[\"a short about bees\", \"a short about volcanoes\"]\n";

/// Analysis of the toy source, a short campaign on the simulated free-form
/// system, then the failure report, all under `opts.out`.
pub fn run_demo(opts: &DemoOptions) -> Result<DemoOutcome, DemoError> {
    let out = &opts.out;
    let sut = out.join("sut");
    for (name, text) in SUT_FILES {
        write(&sut.join(name), text)?;
    }

    let gateway = mock_gateway(ANALYSIS_MOCK);
    let bundle = SourceBundle::collect(&sut, "autogen", DEFAULT_BUDGET_BYTES)?;
    let analysis_opts = AnalysisOptions::default();
    let spec = extract_specification(&bundle, &gateway, &analysis_opts)?;
    let space = extract_behavior_space(&bundle, &spec.value, &gateway, &analysis_opts)?;
    let tasks = generate_initial_tasks(&bundle.input_spec, 4, &gateway, &analysis_opts.model)?;
    let analysis = out.join("analysis");
    write(&analysis.join("specification.json"), &pretty(&spec.value))?;
    write(&analysis.join("behavior_space.json"), &pretty(&space.value))?;
    write(&analysis.join("tasks.json"), &pretty(&tasks.value))?;
    let mut transcript = spec.transcript.clone();
    transcript.extend(space.transcript.iter().cloned());
    transcript.extend(tasks.transcript.iter().cloned());
    write(&analysis.join("transcript.json"), &pretty(&transcript))?;

    let fixtures = out.join("fixtures");
    let (_, scenario_text) = SCENARIOS
        .iter()
        .find(|(n, _)| *n == DEMO_SCENARIO)
        .expect("demo scenario shipped");
    write(&fixtures.join("scenario.json"), scenario_text)?;
    write(&fixtures.join("mock_analysis.json"), ANALYSIS_MOCK)?;
    write(&fixtures.join("mock_coverage.json"), COVERAGE_MOCK)?;
    write(&fixtures.join("mock_oracle.json"), ORACLE_MOCK)?;

    let cfg = CampaignConfig {
        out: out.clone(),
        specification: analysis.join("specification.json"),
        behavior_space: analysis.join("behavior_space.json"),
        tasks: Some(analysis.join("tasks.json")),
        budget: Budget {
            max_iterations: opts.iterations,
            max_wall_clock_secs: None,
        },
        rng_seed: opts.rng_seed,
        adapter: AdapterConfig {
            scenario: Some(fixtures.join("scenario.json")),
            ..AdapterConfig::default()
        },
        llm: LlmRoles {
            analysis: file_mock(fixtures.join("mock_analysis.json")),
            coverage: file_mock(fixtures.join("mock_coverage.json")),
            oracle: file_mock(fixtures.join("mock_oracle.json")),
        },
        ..CampaignConfig::default()
    };
    if let Ok(text) = toml::to_string_pretty(&cfg) {
        write(&fixtures.join("campaign.toml"), &text)?;
    }
    let mut analysis_warnings = spec.warnings;
    analysis_warnings.extend(space.warnings);
    analysis_warnings.extend(tasks.warnings);
    let campaign = run_campaign(&cfg)?;
    Ok(DemoOutcome {
        analysis_warnings,
        campaign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{enumerate_free_form_paths, Path as SpecPath};

    #[test]
    fn shipped_fixtures_load() {
        for (name, _) in SCENARIOS {
            assert!(scenario(name).is_some(), "{name}");
        }
        for kind in FaultKind::ALL {
            assert_eq!(fault_scenario(kind).faults[0].kind, kind);
        }
        assert_eq!(workflow_space().paths.legal_paths.len(), 1);
        let spec = free_form_specification();
        let enumerated = enumerate_free_form_paths(
            &spec.agent_ids(),
            &spec.relationships.dependencies,
            Some(12),
        )
        .unwrap();
        assert_eq!(free_form_space().paths.legal_paths, enumerated.legal_paths);
        assert_eq!(
            free_form_space().paths.legal_paths[1],
            SpecPath::new([
                "script_writer",
                "voice_actor",
                "graphic_designer",
                "director"
            ])
        );
        for m in [ANALYSIS_MOCK, COVERAGE_MOCK, ORACLE_MOCK] {
            assert!(!mock_entries(m).is_empty());
        }
    }

    #[test]
    fn healthy_runs_complete() {
        let limits = RunLimits::default();
        for (name, spec) in [
            ("healthy_workflow", workflow_specification()),
            ("healthy_free_form", free_form_specification()),
        ] {
            let (raw, seq) = run_once(
                &scenario(name).unwrap(),
                &default_case(&spec, "c", "bees"),
                &limits,
            );
            assert!(raw.has_termination(), "{name}");
            assert!(!seq.dead_loop);
            assert_eq!(seq.speaker_order, spec.default_sequence());
        }
    }
}
