//! Seed pool: test-case triples (input, model configuration, agent sequence)
//! with clamped adaptive selection weights.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutation::MutationDescriptor;
use crate::rng::FlareRng;
use crate::spec::AgentId;
use crate::weights::{InvalidWeightParams, WeightParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub model: String,
    pub temperature: f64,
}

/// Per-agent model and sampling temperature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelConfig(BTreeMap<AgentId, AgentModel>);

impl ModelConfig {
    pub fn uniform(agents: &[AgentId], model: &str, temperature: f64) -> Self {
        Self(
            agents
                .iter()
                .map(|a| {
                    (
                        a.clone(),
                        AgentModel {
                            model: model.to_string(),
                            temperature,
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (AgentId, AgentModel)>) -> Self {
        Self(entries.into_iter().collect())
    }

    pub fn get(&self, agent: &AgentId) -> Option<&AgentModel> {
        self.0.get(agent)
    }

    pub fn get_mut(&mut self, agent: &AgentId) -> Option<&mut AgentModel> {
        self.0.get_mut(agent)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentId, &AgentModel)> {
        self.0.iter()
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Agents whose entry differs between `self` and `other`.
    pub fn diff(&self, other: &ModelConfig) -> Vec<AgentId> {
        let keys: BTreeSet<&AgentId> = self.0.keys().chain(other.0.keys()).collect();
        keys.into_iter()
            .filter(|k| self.0.get(*k) != other.0.get(*k))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: u64,
    pub mutation: MutationDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub seed_id: u64,
    /// System input; empty for the null-input seed.
    pub input: String,
    pub config: ModelConfig,
    pub sequence: Vec<AgentId>,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("at least one task description is required (pool size N >= 2)")]
    NoTasks,
    #[error(transparent)]
    Weights(#[from] InvalidWeightParams),
    #[error("sequence {0:?} is not a permutation of the system's agents")]
    NotAPermutation(Vec<AgentId>),
    #[error("model configuration does not cover exactly the system's agents")]
    ConfigCoverage,
    #[error("temperature {1} for agent `{0}` outside [0, 2]")]
    Temperature(AgentId, f64),
    #[error("unknown seed id {0}")]
    UnknownSeed(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPool {
    agents: BTreeSet<AgentId>,
    seeds: Vec<Seed>,
    params: WeightParams,
    rng_seed: u64,
    next_id: u64,
}

impl SeedPool {
    /// Builds the initial pool: one seed per task description plus one
    /// null-input seed, all at `w_init` with the default configuration and
    /// sequence.
    pub fn init(
        tasks: &[String],
        default_config: &ModelConfig,
        default_sequence: &[AgentId],
        params: WeightParams,
        rng_seed: u64,
    ) -> Result<Self, CorpusError> {
        params.validate()?;
        if tasks.is_empty() {
            return Err(CorpusError::NoTasks);
        }
        let agents: BTreeSet<AgentId> = default_sequence.iter().cloned().collect();
        let mut pool = Self {
            agents,
            seeds: Vec::with_capacity(tasks.len() + 1),
            params,
            rng_seed,
            next_id: 0,
        };
        let inputs = tasks.iter().cloned().chain(std::iter::once(String::new()));
        for input in inputs {
            let seed = Seed {
                seed_id: 0,
                input,
                config: default_config.clone(),
                sequence: default_sequence.to_vec(),
                weight: params.w_init,
                lineage: None,
            };
            pool.check(&seed)?;
            pool.push(seed);
        }
        Ok(pool)
    }

    fn push(&mut self, mut seed: Seed) -> u64 {
        seed.seed_id = self.next_id;
        self.next_id += 1;
        let id = seed.seed_id;
        self.seeds.push(seed);
        id
    }

    fn check(&self, seed: &Seed) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        let permutation = seed.sequence.len() == self.agents.len()
            && seed
                .sequence
                .iter()
                .all(|a| self.agents.contains(a) && seen.insert(a));
        if !permutation {
            return Err(CorpusError::NotAPermutation(seed.sequence.clone()));
        }
        if seed.config.len() != self.agents.len()
            || !seed.config.agents().all(|a| self.agents.contains(a))
        {
            return Err(CorpusError::ConfigCoverage);
        }
        for (agent, m) in seed.config.iter() {
            if !(0.0..=2.0).contains(&m.temperature) {
                return Err(CorpusError::Temperature(agent.clone(), m.temperature));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn get(&self, seed_id: u64) -> Option<&Seed> {
        self.seeds.iter().find(|s| s.seed_id == seed_id)
    }

    /// Weighted random choice: seed `i` with probability `w_i / sum(w)`.
    pub fn select(&self, rng: &mut FlareRng) -> &Seed {
        let weights: Vec<f64> = self.seeds.iter().map(|s| s.weight).collect();
        &self.seeds[rng.weighted_index(&weights)]
    }

    /// Applies the clamped fixed-step rule and returns the new weight.
    pub fn update_weight(&mut self, seed_id: u64, gained: bool) -> Result<f64, CorpusError> {
        let params = self.params;
        let seed = self
            .seeds
            .iter_mut()
            .find(|s| s.seed_id == seed_id)
            .ok_or(CorpusError::UnknownSeed(seed_id))?;
        seed.weight = params.step(seed.weight, gained);
        Ok(seed.weight)
    }

    /// Appends a variant at `w_init`, keeping its lineage; returns its id.
    pub fn add(&mut self, mut variant: Seed) -> Result<u64, CorpusError> {
        self.check(&variant)?;
        variant.weight = self.params.w_init;
        Ok(self.push(variant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agents() -> Vec<AgentId> {
        ["S", "V", "G", "D"].map(AgentId::from).to_vec()
    }

    fn pool(n_tasks: usize) -> SeedPool {
        let tasks: Vec<String> = (1..=n_tasks).map(|i| format!("task {i}")).collect();
        let cfg = ModelConfig::uniform(&agents(), "gpt-4.1", 0.7);
        SeedPool::init(&tasks, &cfg, &agents(), WeightParams::default(), 1).unwrap()
    }

    #[test]
    fn init_adds_null_input() {
        let p = pool(4);
        assert_eq!(p.len(), 5);
        assert_eq!(p.seeds().iter().filter(|s| s.input.is_empty()).count(), 1);
        assert!(p.seeds().iter().all(|s| s.weight == 1.0));
        assert_eq!(pool(1).len(), 2);
    }

    #[test]
    fn init_requires_tasks() {
        let cfg = ModelConfig::uniform(&agents(), "m", 0.0);
        assert_eq!(
            SeedPool::init(&[], &cfg, &agents(), WeightParams::default(), 0),
            Err(CorpusError::NoTasks)
        );
    }

    #[test]
    fn weight_updates_clamp() {
        let mut p = pool(1);
        assert!((p.update_weight(0, true).unwrap() - 1.2).abs() < 1e-12);
        for _ in 0..100 {
            p.update_weight(0, true).unwrap();
        }
        assert_eq!(p.get(0).unwrap().weight, 4.0);
        for _ in 0..100 {
            p.update_weight(0, false).unwrap();
        }
        assert_eq!(p.get(0).unwrap().weight, 0.25);
        assert_eq!(p.update_weight(99, true), Err(CorpusError::UnknownSeed(99)));
    }

    #[test]
    fn single_seed_pool_always_selected() {
        let mut p = pool(1);
        p.seeds.truncate(1);
        let mut rng = FlareRng::seeded(5);
        for _ in 0..100 {
            assert_eq!(p.select(&mut rng).seed_id, 0);
        }
    }

    #[test]
    fn add_checks_permutation() {
        let mut p = pool(1);
        let mut v = p.get(0).unwrap().clone();
        v.weight = 3.0;
        let id = p.add(v.clone()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.get(id).unwrap().weight, 1.0);
        v.sequence.pop();
        assert!(matches!(p.add(v), Err(CorpusError::NotAPermutation(_))));
    }
}
