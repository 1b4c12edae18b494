//! Intra-agent (AAC) and inter-agent (RAC) coverage.

mod mapping;
mod relax;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mapping::{
    blank_turn_agents, looping_agents, map_behaviors, BehaviorRef, MappingOutcome, EMPTY_TURN_RUN,
    MAPPING_PROMPT,
};
pub use relax::{
    equivalent_under_independence, match_path, relax_trace, trace_of, CanonicalTrace, PathMatch,
    RelaxRule, TraceNode,
};

use crate::spec::BehaviorSpace;

pub const COVERAGE_SCHEMA: &str = "flare-coverage/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub iteration: u64,
    pub aac: f64,
    pub aac_n: f64,
    pub rac: f64,
    pub new_hits: Vec<BehaviorRef>,
    pub matched_path: Option<usize>,
    pub gained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTotals {
    /// Every declared behavior, boundaries included.
    pub intra: usize,
    /// Expected behaviors only.
    pub expected: usize,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoverageError {
    #[error("behavior ({}, {}) is not declared in the behavior space", .0.agent, .0.behavior_id)]
    UnknownBehavior(BehaviorRef),
    #[error("path index {0} is outside the legal path space")]
    UnknownPath(usize),
}

/// Cumulative hit matrix and covered-path set with per-iteration history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageState {
    pub schema_version: String,
    pub totals: CoverageTotals,
    declared: BTreeSet<BehaviorRef>,
    expected: BTreeSet<BehaviorRef>,
    pub behavior_hits: BTreeSet<BehaviorRef>,
    pub covered_paths: BTreeSet<usize>,
    pub history: Vec<CoverageSnapshot>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl CoverageState {
    pub fn new(space: &BehaviorSpace) -> Self {
        let declared: BTreeSet<BehaviorRef> = space
            .intra
            .iter()
            .map(|b| BehaviorRef::new(b.agent.clone(), b.behavior_id))
            .collect();
        let expected: BTreeSet<BehaviorRef> = space
            .intra
            .iter()
            .filter(|b| !b.kind.is_boundary())
            .map(|b| BehaviorRef::new(b.agent.clone(), b.behavior_id))
            .collect();
        Self {
            schema_version: COVERAGE_SCHEMA.to_string(),
            totals: CoverageTotals {
                intra: declared.len(),
                expected: expected.len(),
                paths: space.paths.legal_paths.len(),
            },
            declared,
            expected,
            behavior_hits: BTreeSet::new(),
            covered_paths: BTreeSet::new(),
            history: Vec::new(),
        }
    }

    pub fn aac(&self) -> f64 {
        ratio(self.behavior_hits.len(), self.totals.intra)
    }

    /// AAC over expected behaviors only.
    pub fn aac_n(&self) -> f64 {
        ratio(
            self.behavior_hits.intersection(&self.expected).count(),
            self.totals.expected,
        )
    }

    pub fn rac(&self) -> f64 {
        ratio(self.covered_paths.len(), self.totals.paths)
    }

    /// Unions one run's hits and path into the state and reports whether
    /// either criterion grew.
    pub fn update(
        &mut self,
        iteration: u64,
        hits: &BTreeSet<BehaviorRef>,
        matched_path: Option<usize>,
    ) -> Result<bool, CoverageError> {
        if let Some(bad) = hits.iter().find(|h| !self.declared.contains(h)) {
            return Err(CoverageError::UnknownBehavior(bad.clone()));
        }
        if let Some(p) = matched_path.filter(|p| *p >= self.totals.paths) {
            return Err(CoverageError::UnknownPath(p));
        }
        let new_hits: Vec<BehaviorRef> = hits.difference(&self.behavior_hits).cloned().collect();
        self.behavior_hits.extend(new_hits.iter().cloned());
        let new_path = matched_path.is_some_and(|p| self.covered_paths.insert(p));
        let gained = !new_hits.is_empty() || new_path;
        self.history.push(CoverageSnapshot {
            iteration,
            aac: self.aac(),
            aac_n: self.aac_n(),
            rac: self.rac(),
            new_hits,
            matched_path,
            gained,
        });
        Ok(gained)
    }

    /// The `coverage.json` document.
    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": self.schema_version,
            "totals": self.totals,
            "aac": self.aac(),
            "aac_n": self.aac_n(),
            "rac": self.rac(),
            "behavior_hits": self.behavior_hits,
            "covered_paths": self.covered_paths,
            "history": self.history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{AgentId, BehaviorDef, BehaviorKind, ExecutionPathSpace, Path, SPACE_SCHEMA};

    fn space() -> BehaviorSpace {
        let def = |agent: &str, id, kind| BehaviorDef {
            behavior_id: id,
            agent: AgentId::from(agent),
            kind,
            description: String::new(),
        };
        BehaviorSpace {
            schema_version: SPACE_SCHEMA.into(),
            intra: vec![
                def("S", 1, BehaviorKind::Expected),
                def("S", 2, BehaviorKind::BoundaryEmptyUtterance),
                def("D", 1, BehaviorKind::Expected),
                def("D", 2, BehaviorKind::BoundaryUnproductiveLoop),
            ],
            paths: ExecutionPathSpace {
                legal_paths: vec![Path::new(["S", "D"]), Path::new(["D", "S"])],
                max_turns: None,
            },
        }
    }

    #[test]
    fn gain_and_idempotence() {
        let mut st = CoverageState::new(&space());
        let hits: BTreeSet<_> = [BehaviorRef::new("S", 1)].into();
        assert!(st.update(1, &hits, None).unwrap());
        let before = (st.behavior_hits.clone(), st.covered_paths.clone());
        assert!(!st.update(2, &hits, None).unwrap());
        assert_eq!(before, (st.behavior_hits.clone(), st.covered_paths.clone()));
        assert_eq!(st.history[0].aac, st.history[1].aac);
        assert!((st.aac() - 0.25).abs() < 1e-12);
        assert!((st.aac_n() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rac_reaches_one() {
        let mut st = CoverageState::new(&space());
        st.update(1, &BTreeSet::new(), Some(0)).unwrap();
        assert_eq!(st.rac(), 0.5);
        assert!(st.update(2, &BTreeSet::new(), Some(1)).unwrap());
        assert_eq!(st.rac(), 1.0);
    }

    #[test]
    fn rejects_undeclared() {
        let mut st = CoverageState::new(&space());
        assert!(st
            .update(1, &[BehaviorRef::new("S", 9)].into(), None)
            .is_err());
        assert!(st.update(1, &BTreeSet::new(), Some(2)).is_err());
        assert!(st.history.is_empty());
    }
}
