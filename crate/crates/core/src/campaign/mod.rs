//! The fuzzing loop: select, mutate, execute, distill, cover, feed back,
//! persist.

mod config;
mod store;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    AdapterConfig, Budget, CampaignConfig, ConfigError, LlmRoles, OracleSettings, RoleBinding,
    SutDefaults, ENV_PREFIX,
};
pub use store::{
    generate_report, load_state, regenerate_report, CampaignManifest, IterationRecord, ReportError,
    Store, CAMPAIGN_SCHEMA, CORPUS_SCHEMA, STATE_SCHEMA,
};

use crate::analysis::{generate_initial_tasks, AnalysisError};
use crate::corpus::{CorpusError, ModelConfig, SeedPool};
use crate::coverage::{
    map_behaviors, match_path, relax_trace, trace_of, CoverageError, CoverageState,
};
use crate::harness::sim::{FaultScenario, SimAdapter};
use crate::harness::{Adapter, RawRunRecord, SubprocessAdapter, TestCase};
use crate::llm::{Gateway, GatewayError};
use crate::logs::build_event_sequence;
use crate::mutation::{mutate, Mutation, MutationError, OperatorTable};
use crate::oracle::FailureReport;
use crate::rng::{FlareRng, UnknownAlgorithm};
use crate::spec::{
    load_behavior_space, load_specification, BehaviorSpace, DependencyClosure, LoadError,
    Specification, Strictness,
};

/// Round limit used when neither the configuration nor the specification
/// gives one.
pub const FALLBACK_MAX_ROUNDS: u32 = 12;

/// Unrecoverable failures before or outside the loop. Anything the system
/// under test does is data and never surfaces here.
#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("adapter unavailable: {0}")]
    Adapter(String),
    #[error("{role} gateway: {source}")]
    Gateway {
        role: &'static str,
        source: GatewayError,
    },
    #[error("seed task generation failed: {0}")]
    Tasks(#[from] AnalysisError),
    #[error("cannot read task list {path}: {reason}")]
    TaskFile { path: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rng(#[from] UnknownAlgorithm),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(
        "state in {0} belongs to a different campaign (specification, space or rng seed changed)"
    )]
    StateMismatch(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Iterations,
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub elapsed_ms: u64,
    pub iterations_this_session: u64,
    pub mean_iteration_ms: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub campaign_id: String,
    pub out: PathBuf,
    pub iterations_run: u64,
    pub stopped_by: StopReason,
    pub coverage: CoverageState,
    pub corpus: SeedPool,
    pub run_ids: Vec<String>,
    pub report: Option<FailureReport>,
    pub timing: TimingStats,
}

/// Persisted loop state; everything needed to continue after a crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub schema_version: String,
    pub campaign_id: String,
    pub fingerprint: String,
    pub iterations_done: u64,
    pub rng: FlareRng,
    pub operators: OperatorTable,
    pub pool: SeedPool,
    pub coverage: CoverageState,
    pub run_ids: Vec<String>,
    pub tasks: Vec<String>,
}

/// Seed and operator receive the same signal.
pub fn feedback(
    gained: bool,
    seed_id: u64,
    operator: crate::mutation::OperatorKind,
    pool: &mut SeedPool,
    operators: &mut OperatorTable,
) -> Result<(), CorpusError> {
    pool.update_weight(seed_id, gained)?;
    operators.update(operator, gained);
    Ok(())
}

fn fingerprint(spec: &Specification, space: &BehaviorSpace, rng_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(serde_json::to_vec(space).expect("space serializes"));
    h.update(rng_seed.to_le_bytes());
    hex::encode(h.finalize())
}

fn build_adapter(cfg: &AdapterConfig) -> Result<Box<dyn Adapter>, CampaignError> {
    if let Some(path) = &cfg.scenario {
        let text = std::fs::read_to_string(path).map_err(|source| CampaignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario =
            FaultScenario::from_json(&text).map_err(|e| CampaignError::Adapter(e.to_string()))?;
        return Ok(Box::new(SimAdapter::new(scenario)));
    }
    let command = cfg
        .command
        .as_deref()
        .ok_or_else(|| CampaignError::Adapter("no adapter configured".into()))?;
    let mut adapter = SubprocessAdapter::from_command_line(command)
        .map_err(|e| CampaignError::Adapter(e.to_string()))?;
    if let Some(dir) = &cfg.cwd {
        adapter = adapter.with_cwd(dir);
    }
    Ok(Box::new(adapter))
}

fn connect(role: &'static str, binding: &RoleBinding) -> Result<Gateway, CampaignError> {
    Gateway::connect(&binding.provider).map_err(|source| CampaignError::Gateway { role, source })
}

fn read_tasks(path: &Path) -> Result<Vec<String>, CampaignError> {
    let err = |reason: String| CampaignError::TaskFile {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let tasks: Vec<String> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if tasks.is_empty() {
        return Err(err("the list is empty".into()));
    }
    Ok(tasks)
}

struct Pending {
    iteration: u64,
    case: TestCase,
    mutation: Mutation,
    selected: u64,
}

struct Runner {
    cfg: CampaignConfig,
    spec: Specification,
    space: BehaviorSpace,
    deps: DependencyClosure,
    adapter: Box<dyn Adapter>,
    coverage_gw: Gateway,
    max_rounds: u32,
    store: Store,
    state: CampaignState,
}

impl Runner {
    fn prepare(&mut self, iteration: u64) -> Result<Pending, CampaignError> {
        let st = &mut self.state;
        let seed = st.pool.select(&mut st.rng).clone();
        let mutation = mutate(
            &seed,
            self.spec.relationships.pattern,
            &st.operators,
            &self.cfg.mutation,
            &self.space.paths,
            &mut st.rng,
        )?;
        let v = &mutation.variant;
        let case = TestCase {
            case_id: format!("case-{iteration:06}"),
            seed_id: seed.seed_id,
            parent_seed: seed.lineage.as_ref().map(|l| l.parent),
            input: v.input.clone(),
            config: v.config.clone(),
            sequence: v.sequence.clone(),
            max_rounds: self.max_rounds,
        };
        Ok(Pending {
            iteration,
            case,
            mutation,
            selected: seed.seed_id,
        })
    }

    fn absorb(&mut self, p: Pending, raw: RawRunRecord) -> Result<(), CampaignError> {
        let limits = &self.cfg.limits;
        let semantic = build_event_sequence(&raw, limits);
        let mut transcript = Vec::new();
        let mapping = map_behaviors(
            &raw,
            semantic.dead_loop,
            limits.loop_repeat_threshold,
            &self.space,
            &self.coverage_gw,
            &self.cfg.llm.coverage.model,
            &mut transcript,
        );
        let canonical = relax_trace(&trace_of(&semantic));
        let matched = match_path(&canonical, &self.space.paths, &self.deps);
        let st = &mut self.state;
        let gained = st.coverage.update(
            p.iteration,
            &mapping.hits,
            matched.as_ref().map(|m| m.index),
        )?;
        feedback(
            gained,
            p.selected,
            p.mutation.descriptor.operator,
            &mut st.pool,
            &mut st.operators,
        )?;
        let added = if gained {
            Some(st.pool.add(p.mutation.variant.clone())?)
        } else {
            None
        };
        let record = IterationRecord {
            iteration: p.iteration,
            case: p.case,
            mutation: p.mutation.descriptor,
            mutation_warnings: p.mutation.warnings,
            exit: raw.exit,
            dead_loop: semantic.dead_loop,
            hits: mapping.hits,
            mapping_warnings: mapping.warnings,
            mapping_degraded: mapping.degraded,
            relaxation: canonical.applied_rules,
            matched_path: matched,
            gained,
            added_seed: added,
            llm_calls: transcript.len(),
        };
        self.store.write_run(&raw, &semantic, &record)?;
        st.run_ids.push(raw.case_id.clone());
        st.iterations_done = st.iterations_done.max(p.iteration);
        log::info!(
            "iteration {} {} exit={:?} aac={:.3} rac={:.3}{}",
            p.iteration,
            record.case.case_id,
            raw.exit,
            st.coverage.aac(),
            st.coverage.rac(),
            if gained { " +gain" } else { "" }
        );
        Ok(())
    }

    fn execute_batch(&self, batch: &[Pending]) -> Vec<(usize, RawRunRecord)> {
        let limits = self.cfg.limits;
        if batch.len() == 1 {
            return vec![(0, self.adapter.execute(&batch[0].case, &limits))];
        }
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|s| {
            for (i, p) in batch.iter().enumerate() {
                let tx = tx.clone();
                let adapter = &self.adapter;
                s.spawn(move || {
                    let _ = tx.send((i, adapter.execute(&p.case, &limits)));
                });
            }
        });
        drop(tx);
        rx.into_iter().collect()
    }
}

/// Bootstraps (or resumes) a campaign and runs it to budget exhaustion,
/// then runs the failure oracle if enabled.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CampaignError> {
    cfg.validate()?;
    let strictness = if cfg.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let spec = load_specification(&cfg.specification, strictness)?.value;
    let space = load_behavior_space(&cfg.behavior_space, &spec, strictness)?.value;
    let adapter = build_adapter(&cfg.adapter)?;
    adapter.check().map_err(CampaignError::Adapter)?;
    let coverage_gw = connect("coverage", &cfg.llm.coverage)?;
    let oracle_gw = if cfg.oracle.enabled {
        Some(connect("oracle", &cfg.llm.oracle)?)
    } else {
        None
    };

    let store = Store::create(&cfg.out)?;
    let fp = fingerprint(&spec, &space, cfg.rng_seed);
    let campaign_id = format!("flare-{}", &fp[..12]);
    let state = match load_state(&cfg.out) {
        Ok(Some(state)) if state.fingerprint == fp => {
            log::info!(
                "resuming {} after iteration {}",
                state.campaign_id,
                state.iterations_done
            );
            state
        }
        Ok(Some(_)) => return Err(CampaignError::StateMismatch(cfg.out.display().to_string())),
        Ok(None) => {
            let tasks = match &cfg.tasks {
                Some(path) => read_tasks(path)?,
                None => {
                    let gw = connect("analysis", &cfg.llm.analysis)?;
                    let docs = match &cfg.sut_docs {
                        Some(p) => {
                            std::fs::read_to_string(p).map_err(|source| CampaignError::Io {
                                path: p.display().to_string(),
                                source,
                            })?
                        }
                        None => serde_json::to_string_pretty(&spec).unwrap_or_default(),
                    };
                    let out = generate_initial_tasks(
                        &docs,
                        cfg.initial_tasks,
                        &gw,
                        &cfg.llm.analysis.model,
                    )?;
                    for w in &out.warnings {
                        log::warn!("task generation: {w}");
                    }
                    out.value
                }
            };
            let agents = spec.default_sequence();
            let default_config =
                ModelConfig::uniform(&agents, &cfg.defaults.model, cfg.defaults.temperature);
            let pool = SeedPool::init(&tasks, &default_config, &agents, cfg.weights, cfg.rng_seed)?;
            CampaignState {
                schema_version: STATE_SCHEMA.into(),
                campaign_id: campaign_id.clone(),
                fingerprint: fp,
                iterations_done: 0,
                rng: FlareRng::new(&cfg.rng_algorithm, cfg.rng_seed)?,
                operators: OperatorTable::new(cfg.weights).map_err(CorpusError::from)?,
                pool,
                coverage: CoverageState::new(&space),
                run_ids: Vec::new(),
                tasks,
            }
        }
        Err(e) => return Err(e.into()),
    };
    store.write_manifest(&CampaignManifest::new(&campaign_id, cfg), &spec, &space)?;
    store.write_state(&state)?;

    let max_rounds = cfg
        .defaults
        .max_rounds
        .or(spec.termination.max_rounds)
        .unwrap_or(FALLBACK_MAX_ROUNDS);
    let deps = DependencyClosure::new(&spec.effective_dependencies());
    let mut runner = Runner {
        cfg: cfg.clone(),
        spec,
        space,
        deps,
        adapter,
        coverage_gw,
        max_rounds,
        store,
        state,
    };

    let started = Instant::now();
    let deadline = cfg
        .budget
        .max_wall_clock_secs
        .map(|s| started + Duration::from_secs(s));
    let first = runner.state.iterations_done;
    let mut stopped_by = StopReason::Iterations;
    while runner.state.iterations_done < cfg.budget.max_iterations {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stopped_by = StopReason::WallClock;
            break;
        }
        let done = runner.state.iterations_done;
        let k = (cfg.parallelism as u64).min(cfg.budget.max_iterations - done);
        let mut pending = Vec::with_capacity(k as usize);
        for i in 1..=k {
            pending.push(runner.prepare(done + i)?);
        }
        let results = runner.execute_batch(&pending);
        let mut slots: Vec<Option<Pending>> = pending.into_iter().map(Some).collect();
        for (i, raw) in results {
            let p = slots[i].take().expect("each result arrives once");
            runner.absorb(p, raw)?;
        }
        // Once per batch: a crash inside a batch replays all of it from the
        // state (and rng) before the batch.
        runner.store.write_state(&runner.state)?;
    }

    let elapsed = started.elapsed();
    let this_session = runner.state.iterations_done - first;
    let report = match &oracle_gw {
        Some(gw) => Some(generate_report(
            &cfg.out,
            gw,
            &cfg.llm.oracle.model,
            cfg.oracle.max_rounds,
            cfg.limits,
        )?),
        None => None,
    };
    let timing = TimingStats {
        elapsed_ms: elapsed.as_millis() as u64,
        iterations_this_session: this_session,
        mean_iteration_ms: if this_session == 0 {
            0.0
        } else {
            elapsed.as_secs_f64() * 1000.0 / this_session as f64
        },
    };
    let state = runner.state;
    runner.store.write_summary(&serde_json::json!({
        "campaign_id": state.campaign_id,
        "iterations": state.iterations_done,
        "stopped_by": stopped_by,
        "aac": state.coverage.aac(),
        "aac_n": state.coverage.aac_n(),
        "rac": state.coverage.rac(),
        "corpus_size": state.pool.len(),
        "confirmed_failures": report.as_ref().map(|r| r.summary.confirmed),
        "timing": timing,
    }))?;
    Ok(CampaignResult {
        campaign_id: state.campaign_id,
        out: cfg.out.clone(),
        iterations_run: state.iterations_done,
        stopped_by,
        coverage: state.coverage,
        corpus: state.pool,
        run_ids: state.run_ids,
        report,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mutation::OperatorKind;
    use crate::weights::WeightParams;

    #[test]
    fn feedback_moves_both_weights_together() {
        let agents: Vec<_> = ["a", "b"].map(crate::spec::AgentId::from).to_vec();
        let cfg = ModelConfig::uniform(&agents, "gpt-4.1", 0.7);
        let params = WeightParams::default();
        let mut pool = SeedPool::init(&["t".into()], &cfg, &agents, params, 0).unwrap();
        let mut ops = OperatorTable::new(params).unwrap();
        feedback(true, 0, OperatorKind::Joint, &mut pool, &mut ops).unwrap();
        assert!((pool.get(0).unwrap().weight - 1.2).abs() < 1e-12);
        assert!((ops.weight(OperatorKind::Joint) - 1.2).abs() < 1e-12);
        feedback(false, 0, OperatorKind::Joint, &mut pool, &mut ops).unwrap();
        feedback(false, 0, OperatorKind::Joint, &mut pool, &mut ops).unwrap();
        assert!((pool.get(0).unwrap().weight - 0.8).abs() < 1e-12);
        assert!((ops.weight(OperatorKind::Joint) - 0.8).abs() < 1e-12);
        ops.set_weight(OperatorKind::Joint, params.w_max);
        for _ in 0..20 {
            feedback(true, 0, OperatorKind::Joint, &mut pool, &mut ops).unwrap();
        }
        assert_eq!(pool.get(0).unwrap().weight, params.w_max);
        assert_eq!(ops.weight(OperatorKind::Joint), params.w_max);
    }
}
