//! Seed mutation.
//!
//! Configuration mutation picks one of four operators by adaptive weight and
//! applies it to one uniformly chosen agent. Sequence mutation runs only for
//! free-form systems and swaps in another legal path. The system input is
//! never touched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Lineage, ModelConfig, Seed};
use crate::rng::FlareRng;
use crate::spec::{AgentId, ExecutionPathSpace, Pattern};
use crate::weights::{InvalidWeightParams, WeightParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    TemperatureScaling,
    ModelFamilySwitch,
    Joint,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::Identity,
        OperatorKind::TemperatureScaling,
        OperatorKind::ModelFamilySwitch,
        OperatorKind::Joint,
    ];

    fn changes_temperature(self) -> bool {
        matches!(self, OperatorKind::TemperatureScaling | OperatorKind::Joint)
    }

    fn changes_model(self) -> bool {
        matches!(self, OperatorKind::ModelFamilySwitch | OperatorKind::Joint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigOperator {
    pub kind: OperatorKind,
    pub weight: f64,
}

/// The four configuration operators and their clamped weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorTable {
    operators: Vec<ConfigOperator>,
    params: WeightParams,
}

impl OperatorTable {
    pub fn new(params: WeightParams) -> Result<Self, InvalidWeightParams> {
        params.validate()?;
        Ok(Self {
            operators: OperatorKind::ALL
                .iter()
                .map(|&kind| ConfigOperator {
                    kind,
                    weight: params.w_init,
                })
                .collect(),
            params,
        })
    }

    pub fn operators(&self) -> &[ConfigOperator] {
        &self.operators
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn weight(&self, kind: OperatorKind) -> f64 {
        self.slot(kind).weight
    }

    /// Overwrites a weight, clamped into the table's bounds.
    pub fn set_weight(&mut self, kind: OperatorKind, weight: f64) {
        let (lo, hi) = (self.params.w_min, self.params.w_max);
        self.slot_mut(kind).weight = weight.clamp(lo, hi);
    }

    fn slot(&self, kind: OperatorKind) -> &ConfigOperator {
        self.operators
            .iter()
            .find(|o| o.kind == kind)
            .expect("operator table holds all four kinds")
    }

    fn slot_mut(&mut self, kind: OperatorKind) -> &mut ConfigOperator {
        self.operators
            .iter_mut()
            .find(|o| o.kind == kind)
            .expect("operator table holds all four kinds")
    }

    /// Weighted-proportional draw over the four operators.
    pub fn select(&self, rng: &mut FlareRng) -> OperatorKind {
        let weights: Vec<f64> = self.operators.iter().map(|o| o.weight).collect();
        self.operators[rng.weighted_index(&weights)].kind
    }

    pub fn update(&mut self, kind: OperatorKind, gained: bool) -> f64 {
        let params = self.params;
        let slot = self.slot_mut(kind);
        slot.weight = params.step(slot.weight, gained);
        slot.weight
    }
}

/// Value sets the operators draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationSettings {
    pub temperature_grid: Vec<f64>,
    pub model_families: Vec<String>,
}

impl Default for MutationSettings {
    fn default() -> Self {
        Self {
            temperature_grid: vec![0.0, 0.3, 0.7, 1.0, 1.3],
            model_families: vec![
                "gpt-4.1".into(),
                "gpt-4o-mini".into(),
                "gemini-2.5-pro".into(),
            ],
        }
    }
}

/// Exactly what a mutation changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationDescriptor {
    pub target_agent: AgentId,
    /// Operator drawn from the table; its weight receives the feedback.
    pub operator: OperatorKind,
    /// Operator effectively applied after downgrades.
    pub applied: OperatorKind,
    pub old_temperature: f64,
    pub new_temperature: f64,
    pub old_model: String,
    pub new_model: String,
    pub sequence_changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_sequence: Option<Vec<AgentId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_sequence: Option<Vec<AgentId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    /// The variant; its `seed_id` is assigned when it joins the pool.
    pub variant: Seed,
    pub descriptor: MutationDescriptor,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationError {
    #[error("agent `{0}` has no model configuration")]
    UnknownAgent(AgentId),
    #[error("seed has no agents to mutate")]
    NoAgents,
}

/// Draws an operator by weight, then a uniformly random target agent.
pub fn select_config_operator(
    table: &OperatorTable,
    agents: &[AgentId],
    rng: &mut FlareRng,
) -> Result<(OperatorKind, AgentId), MutationError> {
    if agents.is_empty() {
        return Err(MutationError::NoAgents);
    }
    let kind = table.select(rng);
    let agent = agents[rng.index(agents.len())].clone();
    Ok((kind, agent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub config: ModelConfig,
    pub applied: OperatorKind,
    pub warnings: Vec<String>,
}

/// Applies one operator to one agent's entry; every other entry is untouched.
pub fn apply_operator(
    config: &ModelConfig,
    agent: &AgentId,
    kind: OperatorKind,
    settings: &MutationSettings,
    rng: &mut FlareRng,
) -> Result<Applied, MutationError> {
    let mut out = config.clone();
    let entry = out
        .get_mut(agent)
        .ok_or_else(|| MutationError::UnknownAgent(agent.clone()))?;
    let mut warnings = Vec::new();
    let mut changed_t = false;
    let mut changed_m = false;

    if kind.changes_temperature() {
        let current = entry.temperature;
        let choices: Vec<f64> = settings
            .temperature_grid
            .iter()
            .copied()
            .filter(|t| (t - current).abs() > 1e-9)
            .collect();
        if choices.is_empty() {
            warnings.push(format!(
                "temperature grid offers no value other than {current}; temperature left unchanged"
            ));
        } else {
            entry.temperature = choices[rng.index(choices.len())];
            changed_t = true;
        }
    }
    if kind.changes_model() {
        let current = entry.model.clone();
        let choices: Vec<&String> = settings
            .model_families
            .iter()
            .filter(|m| **m != current)
            .collect();
        if choices.is_empty() {
            warnings.push(format!(
                "model family list offers no model other than `{current}`; downgraded to identity"
            ));
        } else {
            entry.model = choices[rng.index(choices.len())].clone();
            changed_m = true;
        }
    }

    let applied = match (changed_t, changed_m) {
        (true, true) => OperatorKind::Joint,
        (true, false) => OperatorKind::TemperatureScaling,
        (false, true) => OperatorKind::ModelFamilySwitch,
        (false, false) => OperatorKind::Identity,
    };
    Ok(Applied {
        config: out,
        applied,
        warnings,
    })
}

/// Produces one variant of `seed`.
///
/// Configuration and sequence mutation are applied independently. Sequence
/// mutation is skipped entirely for workflow systems and draws from the legal
/// paths that are full permutations of the agents, excluding the current one.
pub fn mutate(
    seed: &Seed,
    pattern: Pattern,
    table: &OperatorTable,
    settings: &MutationSettings,
    path_space: &ExecutionPathSpace,
    rng: &mut FlareRng,
) -> Result<Mutation, MutationError> {
    let agents: Vec<AgentId> = seed.config.agents().cloned().collect();
    let (operator, target) = select_config_operator(table, &agents, rng)?;
    let before = seed
        .config
        .get(&target)
        .ok_or_else(|| MutationError::UnknownAgent(target.clone()))?
        .clone();
    let Applied {
        config,
        applied,
        mut warnings,
    } = apply_operator(&seed.config, &target, operator, settings, rng)?;
    let after = config.get(&target).expect("target kept").clone();

    let mut sequence = seed.sequence.clone();
    if pattern == Pattern::FreeForm {
        let candidates: Vec<&Vec<AgentId>> = path_space
            .legal_paths
            .iter()
            .map(|p| &p.nodes)
            .filter(|nodes| **nodes != seed.sequence && is_permutation_of(nodes, &seed.sequence))
            .collect();
        if candidates.is_empty() {
            warnings
                .push("path space offers no alternative sequence; sequence left unchanged".into());
        } else {
            sequence = candidates[rng.index(candidates.len())].clone();
        }
    }
    let sequence_changed = sequence != seed.sequence;

    let descriptor = MutationDescriptor {
        target_agent: target,
        operator,
        applied,
        old_temperature: before.temperature,
        new_temperature: after.temperature,
        old_model: before.model,
        new_model: after.model,
        sequence_changed,
        old_sequence: sequence_changed.then(|| seed.sequence.clone()),
        new_sequence: sequence_changed.then(|| sequence.clone()),
    };
    let variant = Seed {
        seed_id: seed.seed_id,
        input: seed.input.clone(),
        config,
        sequence,
        weight: seed.weight,
        lineage: Some(Lineage {
            parent: seed.seed_id,
            mutation: descriptor.clone(),
        }),
    };
    Ok(Mutation {
        variant,
        descriptor,
        warnings,
    })
}

fn is_permutation_of(a: &[AgentId], b: &[AgentId]) -> bool {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort();
    y.sort();
    x == y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Path;

    fn agents() -> Vec<AgentId> {
        ["S", "V", "G", "D"].map(AgentId::from).to_vec()
    }

    fn seed() -> Seed {
        Seed {
            seed_id: 3,
            input: "make a video about otters".into(),
            config: ModelConfig::uniform(&agents(), "gpt-4.1", 0.7),
            sequence: agents(),
            weight: 1.0,
            lineage: None,
        }
    }

    fn two_paths() -> ExecutionPathSpace {
        ExecutionPathSpace {
            legal_paths: vec![
                Path::new(["S", "V", "G", "D"]),
                Path::new(["S", "G", "V", "D"]),
            ],
            max_turns: None,
        }
    }

    #[test]
    fn identity_keeps_config() {
        let s = seed();
        let mut rng = FlareRng::seeded(1);
        let a = apply_operator(
            &s.config,
            &"D".into(),
            OperatorKind::Identity,
            &MutationSettings::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.config, s.config);
        assert_eq!(a.applied, OperatorKind::Identity);
    }

    #[test]
    fn temperature_scaling_draws_other_grid_value() {
        let s = seed();
        let settings = MutationSettings::default();
        let mut rng = FlareRng::seeded(2);
        for _ in 0..500 {
            let a = apply_operator(
                &s.config,
                &"V".into(),
                OperatorKind::TemperatureScaling,
                &settings,
                &mut rng,
            )
            .unwrap();
            let t = a.config.get(&"V".into()).unwrap().temperature;
            assert!(settings.temperature_grid.contains(&t));
            assert_ne!(t, 0.7);
        }
    }

    #[test]
    fn joint_is_local() {
        let s = seed();
        let mut rng = FlareRng::seeded(3);
        let a = apply_operator(
            &s.config,
            &"D".into(),
            OperatorKind::Joint,
            &MutationSettings::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.config.diff(&a.config), vec![AgentId::from("D")]);
        let (old, new) = (
            s.config.get(&"D".into()).unwrap(),
            a.config.get(&"D".into()).unwrap(),
        );
        assert_ne!(old.model, new.model);
        assert_ne!(old.temperature, new.temperature);
    }

    #[test]
    fn single_family_downgrades_switch() {
        let s = seed();
        let settings = MutationSettings {
            model_families: vec!["gpt-4.1".into()],
            ..MutationSettings::default()
        };
        let mut rng = FlareRng::seeded(4);
        let a = apply_operator(
            &s.config,
            &"S".into(),
            OperatorKind::ModelFamilySwitch,
            &settings,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.applied, OperatorKind::Identity);
        assert_eq!(a.config, s.config);
        assert_eq!(a.warnings.len(), 1);

        let b = apply_operator(
            &s.config,
            &"S".into(),
            OperatorKind::TemperatureScaling,
            &settings,
            &mut rng,
        )
        .unwrap();
        assert_eq!(b.config.get(&"S".into()).unwrap().model, "gpt-4.1");
        assert_eq!(b.applied, OperatorKind::TemperatureScaling);
    }

    #[test]
    fn workflow_never_changes_sequence() {
        let mut rng = FlareRng::seeded(5);
        let table = OperatorTable::new(WeightParams::default()).unwrap();
        for _ in 0..1000 {
            let m = mutate(
                &seed(),
                Pattern::Workflow,
                &table,
                &MutationSettings::default(),
                &two_paths(),
                &mut rng,
            )
            .unwrap();
            assert!(!m.descriptor.sequence_changed);
            assert_eq!(m.variant.sequence, seed().sequence);
            assert_eq!(m.variant.input, seed().input);
        }
    }

    #[test]
    fn free_form_identity_changes_only_sequence() {
        let mut table = OperatorTable::new(WeightParams::default()).unwrap();
        for k in [
            OperatorKind::TemperatureScaling,
            OperatorKind::ModelFamilySwitch,
            OperatorKind::Joint,
        ] {
            table.set_weight(k, 0.25);
        }
        let mut rng = FlareRng::seeded(6);
        let m = (0..50)
            .map(|_| {
                mutate(
                    &seed(),
                    Pattern::FreeForm,
                    &table,
                    &MutationSettings::default(),
                    &two_paths(),
                    &mut rng,
                )
                .unwrap()
            })
            .find(|m| m.descriptor.operator == OperatorKind::Identity)
            .unwrap();
        assert_eq!(m.variant.config, seed().config);
        assert_eq!(m.variant.sequence, Path::new(["S", "G", "V", "D"]).nodes);
        assert!(m.descriptor.sequence_changed);
        assert_eq!(m.variant.lineage.as_ref().unwrap().parent, 3);
    }

    #[test]
    fn single_path_space_degrades_with_warning() {
        let space = ExecutionPathSpace {
            legal_paths: vec![Path::new(["S", "V", "G", "D"])],
            max_turns: None,
        };
        let table = OperatorTable::new(WeightParams::default()).unwrap();
        let m = mutate(
            &seed(),
            Pattern::FreeForm,
            &table,
            &MutationSettings::default(),
            &space,
            &mut FlareRng::seeded(7),
        )
        .unwrap();
        assert!(!m.descriptor.sequence_changed);
        assert!(m
            .warnings
            .iter()
            .any(|w| w.contains("no alternative sequence")));
    }

    #[test]
    fn operator_weight_rule() {
        let mut table = OperatorTable::new(WeightParams::default()).unwrap();
        assert!((table.update(OperatorKind::Joint, true) - 1.2).abs() < 1e-12);
        table.set_weight(OperatorKind::Joint, 4.0);
        assert_eq!(table.update(OperatorKind::Joint, true), 4.0);
        for i in 0..1000 {
            let w = table.update(OperatorKind::Identity, i % 2 == 0);
            assert!((0.25..=4.0).contains(&w));
        }
    }

    #[test]
    fn low_identity_weight_is_least_frequent() {
        let mut table = OperatorTable::new(WeightParams::default()).unwrap();
        table.set_weight(OperatorKind::Identity, 0.25);
        for k in [
            OperatorKind::TemperatureScaling,
            OperatorKind::ModelFamilySwitch,
            OperatorKind::Joint,
        ] {
            table.set_weight(k, 4.0);
        }
        let mut rng = FlareRng::seeded(8);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let k = table.select(&mut rng);
            counts[OperatorKind::ALL.iter().position(|x| *x == k).unwrap()] += 1;
        }
        assert!(counts[0] < counts[1] && counts[0] < counts[2] && counts[0] < counts[3]);
    }
}
