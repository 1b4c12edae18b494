//! `campaign.toml` and its environment overrides.

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

use crate::harness::RunLimits;
use crate::llm::{HttpBinding, ProviderBinding, StageModel};
use crate::mutation::MutationSettings;
use crate::oracle::DEFAULT_MAX_ROUNDS;
use crate::rng::DEFAULT_ALGORITHM;
use crate::weights::WeightParams;

/// Prefix of environment overrides; nested keys use `__`, as in
/// `FLARE_BUDGET__MAX_ITERATIONS=10`.
pub const ENV_PREFIX: &str = "FLARE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_iterations: u64,
    /// Checked between iterations; unset means no wall-clock limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_wall_clock_secs: Option<u64>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_wall_clock_secs: None,
        }
    }
}

/// How the system under test is reached. Exactly one of the two is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Command line of an adapter process speaking the wire protocol.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// A fault scenario for the built-in simulated system.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cwd: Option<PathBuf>,
}

/// Model settings applied to every agent of the system under test in the
/// initial seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SutDefaults {
    pub model: String,
    pub temperature: f64,
    /// Round limit sent with each run; falls back to the specification's
    /// termination rule, then to 12.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
}

impl Default for SutDefaults {
    fn default() -> Self {
        Self {
            model: "gpt-4.1".into(),
            temperature: 0.7,
            max_rounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleBinding {
    pub provider: ProviderBinding,
    pub model: StageModel,
}

impl Default for RoleBinding {
    fn default() -> Self {
        Self {
            provider: ProviderBinding::OpenaiCompatibleHttp(HttpBinding::default()),
            model: StageModel::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmRoles {
    pub analysis: RoleBinding,
    pub coverage: RoleBinding,
    pub oracle: RoleBinding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    /// Run failure identification when the budget is spent.
    pub enabled: bool,
    pub max_rounds: u32,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub out: PathBuf,
    pub specification: PathBuf,
    pub behavior_space: PathBuf,
    /// JSON array of seed task descriptions; generated when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tasks: Option<PathBuf>,
    /// Number of task descriptions to generate (the pool adds a null input).
    pub initial_tasks: usize,
    /// Documentation handed to task generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sut_docs: Option<PathBuf>,
    pub budget: Budget,
    pub rng_seed: u64,
    pub rng_algorithm: String,
    pub parallelism: usize,
    pub weights: WeightParams,
    pub limits: RunLimits,
    pub mutation: MutationSettings,
    pub defaults: SutDefaults,
    pub adapter: AdapterConfig,
    pub llm: LlmRoles,
    pub oracle: OracleSettings,
    /// Accept unknown fields in the specification and space documents.
    pub lenient: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            out: "flare-out".into(),
            specification: "specification.json".into(),
            behavior_space: "behavior_space.json".into(),
            tasks: None,
            initial_tasks: 4,
            sut_docs: None,
            budget: Budget::default(),
            rng_seed: 0,
            rng_algorithm: DEFAULT_ALGORITHM.into(),
            parallelism: 1,
            weights: WeightParams::default(),
            limits: RunLimits::default(),
            mutation: MutationSettings::default(),
            defaults: SutDefaults::default(),
            adapter: AdapterConfig::default(),
            llm: LlmRoles::default(),
            oracle: OracleSettings::default(),
            lenient: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot load configuration: {0}")]
    Load(#[from] Box<figment::Error>),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl CampaignConfig {
    /// Defaults, then the file, then `FLARE_*` variables. Relative paths in
    /// the file are resolved against the file's directory.
    pub fn load(file: &Path) -> Result<Self, ConfigError> {
        let cfg = Self::load_unchecked(file)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`CampaignConfig::load`] without [`CampaignConfig::validate`], for
    /// callers that only need part of the file (the analysis binding, say).
    pub fn load_unchecked(file: &Path) -> Result<Self, ConfigError> {
        if !file.is_file() {
            return Err(ConfigError::Invalid(format!(
                "configuration file {} not found",
                file.display()
            )));
        }
        let figment = Figment::from(Serialized::defaults(CampaignConfig::default()))
            .merge(Toml::file(file))
            .merge(
                Env::prefixed(ENV_PREFIX)
                    .split("__")
                    .ignore(&["llm_endpoint", "llm_api_key"]),
            );
        let mut cfg: CampaignConfig = figment.extract().map_err(Box::new)?;
        cfg.resolve(file.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        fix(&mut self.specification);
        fix(&mut self.behavior_space);
        for p in [
            &mut self.tasks,
            &mut self.sut_docs,
            &mut self.adapter.scenario,
            &mut self.adapter.cwd,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for role in [
            &mut self.llm.analysis,
            &mut self.llm.coverage,
            &mut self.llm.oracle,
        ] {
            role.provider.rebase(base);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.budget.max_wall_clock_secs == Some(0) {
            return bad("budget.max_wall_clock_secs must be positive".into());
        }
        if self.initial_tasks == 0 && self.tasks.is_none() {
            return bad("initial_tasks must be at least 1".into());
        }
        if let Err(e) = self.weights.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.limits.validate() {
            return bad(e.to_string());
        }
        if self.mutation.temperature_grid.is_empty() || self.mutation.model_families.is_empty() {
            return bad("mutation grids must not be empty".into());
        }
        if let Some(t) = self
            .mutation
            .temperature_grid
            .iter()
            .find(|t| !(0.0..=2.0).contains(*t))
        {
            return bad(format!("temperature {t} in the grid is outside [0, 2]"));
        }
        match (&self.adapter.command, &self.adapter.scenario) {
            (Some(_), Some(_)) => {
                bad("set either adapter.command or adapter.scenario, not both".into())
            }
            (None, None) => bad("no adapter: set adapter.command or adapter.scenario".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use figment::Jail;

    #[test]
    fn file_then_env() {
        Jail::expect_with(|jail| {
            jail.create_file(
                "campaign.toml",
                r#"
                rng_seed = 7
                [budget]
                max_iterations = 20
                [adapter]
                scenario = "scenarios/healthy.json"
                [llm.coverage.provider]
                provider = "scripted_mock"
                script_file = "mock.json"
                "#,
            )?;
            jail.set_env("FLARE_BUDGET__MAX_ITERATIONS", "5");
            jail.set_env("FLARE_OUT", "/tmp/flare-env-out");
            jail.set_env("FLARE_LLM_ENDPOINT", "http://localhost:1");
            let cfg = CampaignConfig::load(&jail.directory().join("campaign.toml")).unwrap();
            assert_eq!(cfg.rng_seed, 7);
            assert_eq!(cfg.budget.max_iterations, 5);
            assert_eq!(cfg.out, PathBuf::from("/tmp/flare-env-out"));
            assert_eq!(
                cfg.adapter.scenario.unwrap(),
                jail.directory().join("scenarios/healthy.json")
            );
            assert!(
                matches!(cfg.llm.coverage.provider, ProviderBinding::ScriptedMock(ref m)
                if m.script_file.as_deref() == Some(jail.directory().join("mock.json").as_path()))
            );
            Ok(())
        });
    }

    #[test]
    fn rejects_missing_adapter() {
        let cfg = CampaignConfig::default();
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("no adapter"));
        let cfg = CampaignConfig {
            parallelism: 0,
            ..CampaignConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
