//! The output tree. Every file is written to a temporary name and renamed,
//! so a killed process leaves either the old or the new version.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use super::{CampaignConfig, CampaignError, CampaignState};
use crate::coverage::{BehaviorRef, PathMatch, RelaxRule};
use crate::harness::{RawRunRecord, RunExit, RunLimits, TestCase};
use crate::llm::{Gateway, StageModel};
use crate::logs::{build_event_sequence, SemanticEventSequence};
use crate::mutation::MutationDescriptor;
use crate::oracle::{
    adjudicate, detect, emit_report, render_markdown, CampaignMeta, FailureReport, RuntimeCrash,
};
use crate::spec::{BehaviorSpace, Specification};

pub const CAMPAIGN_SCHEMA: &str = "flare-campaign/1";
pub const STATE_SCHEMA: &str = "flare-state/1";
pub const CORPUS_SCHEMA: &str = "flare-corpus/1";

/// `campaign.json`: identity plus the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub schema_version: String,
    pub campaign_id: String,
    pub config: CampaignConfig,
}

impl CampaignManifest {
    pub fn new(campaign_id: &str, config: &CampaignConfig) -> Self {
        Self {
            schema_version: CAMPAIGN_SCHEMA.into(),
            campaign_id: campaign_id.into(),
            config: config.clone(),
        }
    }
}

/// `events/<case>.iteration.json`: what one iteration did and learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub case: TestCase,
    pub mutation: MutationDescriptor,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mutation_warnings: Vec<String>,
    pub exit: RunExit,
    pub dead_loop: bool,
    pub hits: BTreeSet<BehaviorRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mapping_warnings: Vec<String>,
    pub mapping_degraded: bool,
    pub relaxation: Vec<RelaxRule>,
    pub matched_path: Option<PathMatch>,
    pub gained: bool,
    pub added_seed: Option<u64>,
    pub llm_calls: usize,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no campaign state in {0}")]
    NoState(String),
    #[error("{path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("oracle gateway: {0}")]
    Gateway(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Corrupt {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn create(root: &Path) -> Result<Self, CampaignError> {
        for dir in [
            root.to_path_buf(),
            root.join("events"),
            root.join("reports"),
        ] {
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root: root.into() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn put<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> Result<(), CampaignError> {
        let path = self.root.join(rel);
        write_json(&path, value).map_err(io_err(&path))
    }

    pub fn write_manifest(
        &self,
        manifest: &CampaignManifest,
        spec: &Specification,
        space: &BehaviorSpace,
    ) -> Result<(), CampaignError> {
        self.put("campaign.json", manifest)?;
        self.put("specification.json", spec)?;
        self.put("behavior_space.json", space)
    }

    /// `state.json` last, so a crash before it replays the iteration.
    pub fn write_state(&self, state: &CampaignState) -> Result<(), CampaignError> {
        self.put(
            "corpus.json",
            &serde_json::json!({
                "schema_version": CORPUS_SCHEMA,
                "campaign_id": state.campaign_id,
                "params": state.pool.params(),
                "seeds": state.pool.seeds(),
            }),
        )?;
        self.put("coverage.json", &state.coverage.report())?;
        self.put("state.json", state)
    }

    pub fn write_run(
        &self,
        raw: &RawRunRecord,
        semantic: &SemanticEventSequence,
        record: &IterationRecord,
    ) -> Result<(), CampaignError> {
        let id = &raw.case_id;
        self.put(&format!("events/{id}.raw.json"), raw)?;
        self.put(&format!("events/{id}.semantic.json"), semantic)?;
        self.put(&format!("events/{id}.iteration.json"), record)
    }

    pub fn write_summary(&self, summary: &serde_json::Value) -> Result<(), CampaignError> {
        self.put("summary.json", summary)
    }
}

pub fn load_state(out: &Path) -> Result<Option<CampaignState>, ReportError> {
    let path = out.join("state.json");
    if !path.is_file() {
        return Ok(None);
    }
    let state: CampaignState = read_json(&path)?;
    if state.schema_version != STATE_SCHEMA {
        return Err(ReportError::Corrupt {
            path: path.display().to_string(),
            reason: format!("unsupported schema {}", state.schema_version),
        });
    }
    Ok(Some(state))
}

impl CampaignManifest {
    pub fn load(out: &Path) -> Result<Self, ReportError> {
        let path = out.join("campaign.json");
        if !path.is_file() {
            return Err(ReportError::NoState(out.display().to_string()));
        }
        read_json(&path)
    }
}

/// Runs the failure oracle over every recorded run of the campaign in
/// `out` and writes `reports/failures.json` and `reports/failures.md`.
///
/// Crashed runs and harness errors are listed as runtime crashes and not
/// analyzed further; their logs are incomplete by definition.
pub fn generate_report(
    out: &Path,
    gateway: &Gateway,
    model: &StageModel,
    max_rounds: u32,
    limits: RunLimits,
) -> Result<FailureReport, ReportError> {
    let state = load_state(out)?.ok_or_else(|| ReportError::NoState(out.display().to_string()))?;
    let spec: Specification = read_json(&out.join("specification.json"))?;
    let mut meta = CampaignMeta {
        campaign_id: state.campaign_id.clone(),
        runs_analyzed: 0,
        ..CampaignMeta::default()
    };
    let mut verdicts = Vec::new();
    let mut crashes = Vec::new();
    let mut transcript = Vec::new();
    for id in &state.run_ids {
        let raw: RawRunRecord = read_json(&out.join(format!("events/{id}.raw.json")))?;
        if matches!(raw.exit, RunExit::Crash | RunExit::AdapterError) {
            let tail = raw.stderr_tail.lines().last().unwrap_or_default();
            let detail = match (raw.detail.is_empty(), tail.is_empty()) {
                (false, _) => raw.detail.clone(),
                (true, false) => tail.to_string(),
                (true, true) => "(no detail)".to_string(),
            };
            crashes.push(RuntimeCrash {
                case_id: id.clone(),
                exit: raw.exit,
                detail,
            });
            continue;
        }
        let semantic_path = out.join(format!("events/{id}.semantic.json"));
        let semantic: SemanticEventSequence = if semantic_path.is_file() {
            read_json(&semantic_path)?
        } else {
            build_event_sequence(&raw, &limits)
        };
        meta.runs_analyzed += 1;
        let found = detect(&semantic, &spec, gateway, model, &mut transcript);
        if found.degraded {
            meta.degraded_runs.push(id.clone());
        }
        meta.warnings.extend(found.warnings);
        verdicts.extend(adjudicate(
            &found.violations,
            &semantic,
            &spec,
            gateway,
            model,
            max_rounds,
            &mut transcript,
        ));
    }
    let report = emit_report(&meta, &verdicts, crashes);
    let reports = out.join("reports");
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| ReportError::Io { path: p, source }
    };
    std::fs::create_dir_all(&reports).map_err(io(&reports))?;
    let json = reports.join("failures.json");
    write_json(&json, &report).map_err(io(&json))?;
    let md = reports.join("failures.md");
    write_atomic(&md, render_markdown(&report).as_bytes()).map_err(io(&md))?;
    let log = reports.join("oracle_transcript.json");
    write_json(&log, &transcript).map_err(io(&log))?;
    Ok(report)
}

/// `flare report`: the oracle binding and limits come from `campaign.json`.
pub fn regenerate_report(out: &Path) -> Result<FailureReport, ReportError> {
    let manifest = CampaignManifest::load(out)?;
    let cfg = manifest.config;
    let gateway = Gateway::connect(&cfg.llm.oracle.provider)
        .map_err(|e| ReportError::Gateway(e.to_string()))?;
    generate_report(
        out,
        &gateway,
        &cfg.llm.oracle.model,
        cfg.oracle.max_rounds,
        cfg.limits,
    )
}
