//! Execution-path enumeration for free-form systems.
//!
//! A legal path is a linear extension of the dependency order over all
//! agents. Paths are produced in lexicographic order of agent names by a
//! backtracking search that always tries the smallest available agent first.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::types::{AgentId, Dependency, ExecutionPathSpace, Path};

/// Upper bound on agents accepted by [`enumerate_free_form_paths`] (8! paths).
pub const MAX_ENUMERATED_AGENTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathSpaceError {
    #[error("agent list is empty")]
    NoAgents,
    #[error("duplicate agent id `{0}`")]
    DuplicateAgent(AgentId),
    #[error("dependency references unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("cyclic dependencies among {0:?}")]
    Cyclic(Vec<AgentId>),
    #[error("{0} agents exceed the enumeration ceiling of {MAX_ENUMERATED_AGENTS}")]
    TooManyAgents(usize),
    #[error("max_turns must be positive")]
    ZeroMaxTurns,
    #[error("every permutation has {len} nodes, above max_turns={max_turns}")]
    AllPathsExcluded { len: usize, max_turns: u32 },
}

/// Enumerates every ordering of `agents` that respects all `dependencies`.
///
/// Paths longer than `max_turns` are excluded, not prefix-truncated.
pub fn enumerate_free_form_paths(
    agents: &[AgentId],
    dependencies: &[Dependency],
    max_turns: Option<u32>,
) -> Result<ExecutionPathSpace, PathSpaceError> {
    if agents.is_empty() {
        return Err(PathSpaceError::NoAgents);
    }
    let mut seen = BTreeSet::new();
    for a in agents {
        if !seen.insert(a) {
            return Err(PathSpaceError::DuplicateAgent(a.clone()));
        }
    }
    if agents.len() > MAX_ENUMERATED_AGENTS {
        return Err(PathSpaceError::TooManyAgents(agents.len()));
    }
    if max_turns == Some(0) {
        return Err(PathSpaceError::ZeroMaxTurns);
    }
    for d in dependencies {
        for end in [&d.before, &d.after] {
            if !seen.contains(end) {
                return Err(PathSpaceError::UnknownAgent(end.clone()));
            }
        }
    }
    if let Some(cycle) = find_cycle(agents, dependencies) {
        return Err(PathSpaceError::Cyclic(cycle));
    }
    if let Some(limit) = max_turns {
        if agents.len() > limit as usize {
            return Err(PathSpaceError::AllPathsExcluded {
                len: agents.len(),
                max_turns: limit,
            });
        }
    }

    let mut sorted: Vec<&AgentId> = agents.iter().collect();
    sorted.sort();
    let index: BTreeMap<&AgentId, usize> =
        sorted.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let n = sorted.len();
    let mut preds = vec![0u32; n];
    for d in dependencies {
        if d.before != d.after {
            preds[index[&d.after]] |= 1 << index[&d.before];
        }
    }

    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    extend(&sorted, &preds, 0, &mut current, &mut out);
    Ok(ExecutionPathSpace {
        legal_paths: out,
        max_turns,
    })
}

fn extend(
    sorted: &[&AgentId],
    preds: &[u32],
    placed: u32,
    current: &mut Vec<usize>,
    out: &mut Vec<Path>,
) {
    if current.len() == sorted.len() {
        out.push(Path {
            nodes: current.iter().map(|&i| sorted[i].clone()).collect(),
        });
        return;
    }
    for i in 0..sorted.len() {
        let bit = 1 << i;
        if placed & bit == 0 && preds[i] & !placed == 0 {
            current.push(i);
            extend(sorted, preds, placed | bit, current, out);
            current.pop();
        }
    }
}

/// Returns the agents on some dependency cycle, if one exists.
pub fn find_cycle(agents: &[AgentId], dependencies: &[Dependency]) -> Option<Vec<AgentId>> {
    let mut succ: BTreeMap<&AgentId, Vec<&AgentId>> = BTreeMap::new();
    for d in dependencies {
        succ.entry(&d.before).or_default().push(&d.after);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<&AgentId, u8> = BTreeMap::new();
    let mut stack: Vec<&AgentId> = Vec::new();

    fn visit<'a>(
        node: &'a AgentId,
        succ: &BTreeMap<&'a AgentId, Vec<&'a AgentId>>,
        state: &mut BTreeMap<&'a AgentId, u8>,
        stack: &mut Vec<&'a AgentId>,
    ) -> Option<Vec<AgentId>> {
        state.insert(node, 1);
        stack.push(node);
        for &next in succ.get(node).map(Vec::as_slice).unwrap_or_default() {
            match state.get(next).copied().unwrap_or(0) {
                1 => {
                    let start = stack.iter().position(|n| *n == next).unwrap_or(0);
                    return Some(stack[start..].iter().map(|a| (*a).clone()).collect());
                }
                0 => {
                    if let Some(c) = visit(next, succ, state, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        state.insert(node, 2);
        None
    }

    let mut roots: Vec<&AgentId> = agents.iter().collect();
    for d in dependencies {
        roots.push(&d.before);
    }
    for r in roots {
        if state.get(r).copied().unwrap_or(0) == 0 {
            if let Some(c) = visit(r, &succ, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Reachability over dependency edges: `a` and `b` are independent when there
/// is no dependency path between them in either direction.
#[derive(Debug, Clone)]
pub struct DependencyClosure {
    reach: BTreeSet<(AgentId, AgentId)>,
}

impl DependencyClosure {
    pub fn new(dependencies: &[Dependency]) -> Self {
        let mut succ: BTreeMap<&AgentId, BTreeSet<&AgentId>> = BTreeMap::new();
        for d in dependencies {
            succ.entry(&d.before).or_default().insert(&d.after);
        }
        let mut reach = BTreeSet::new();
        for &start in succ.keys() {
            let mut frontier: Vec<&AgentId> = vec![start];
            let mut seen: BTreeSet<&AgentId> = BTreeSet::new();
            while let Some(n) = frontier.pop() {
                for &m in succ.get(n).into_iter().flatten() {
                    if seen.insert(m) {
                        frontier.push(m);
                    }
                }
            }
            for m in seen {
                reach.insert((start.clone(), m.clone()));
            }
        }
        Self { reach }
    }

    pub fn depends(&self, before: &AgentId, after: &AgentId) -> bool {
        self.reach.contains(&(before.clone(), after.clone()))
    }

    pub fn independent(&self, a: &AgentId, b: &AgentId) -> bool {
        a != b && !self.depends(a, b) && !self.depends(b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<AgentId> {
        names.iter().map(|n| AgentId::from(*n)).collect()
    }

    #[test]
    fn shortsmaker_free_form_has_two_paths() {
        let agents = ids(&["S", "V", "G", "D"]);
        let deps = vec![
            Dependency::new("S", "V"),
            Dependency::new("S", "G"),
            Dependency::new("V", "D"),
            Dependency::new("G", "D"),
        ];
        let space = enumerate_free_form_paths(&agents, &deps, None).unwrap();
        let got: BTreeSet<Path> = space.legal_paths.into_iter().collect();
        let want: BTreeSet<Path> = [
            Path::new(["S", "V", "G", "D"]),
            Path::new(["S", "G", "V", "D"]),
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn single_agent() {
        let space = enumerate_free_form_paths(&ids(&["solo"]), &[], Some(1)).unwrap();
        assert_eq!(space.legal_paths, vec![Path::new(["solo"])]);
    }

    #[test]
    fn unconstrained_three_in_lex_order() {
        let space = enumerate_free_form_paths(&ids(&["c", "a", "b"]), &[], Some(3)).unwrap();
        let names: Vec<String> = space.legal_paths.iter().map(|p| p.to_string()).collect();
        assert_eq!(
            names,
            [
                "[a, b, c]",
                "[a, c, b]",
                "[b, a, c]",
                "[b, c, a]",
                "[c, a, b]",
                "[c, b, a]"
            ]
        );
    }

    #[test]
    fn rejects_cycles_duplicates_and_overflow() {
        let agents = ids(&["A", "B"]);
        let cyc = vec![Dependency::new("A", "B"), Dependency::new("B", "A")];
        assert!(matches!(
            enumerate_free_form_paths(&agents, &cyc, None),
            Err(PathSpaceError::Cyclic(_))
        ));
        assert!(matches!(
            enumerate_free_form_paths(&ids(&["A", "A"]), &[], None),
            Err(PathSpaceError::DuplicateAgent(_))
        ));
        let nine: Vec<AgentId> = (0..9).map(|i| AgentId::new(format!("a{i}"))).collect();
        assert_eq!(
            enumerate_free_form_paths(&nine, &[], None),
            Err(PathSpaceError::TooManyAgents(9))
        );
        assert!(matches!(
            enumerate_free_form_paths(&ids(&["A", "B", "C"]), &[], Some(2)),
            Err(PathSpaceError::AllPathsExcluded {
                len: 3,
                max_turns: 2
            })
        ));
    }

    #[test]
    fn closure_is_transitive() {
        let deps = vec![Dependency::new("S", "V"), Dependency::new("V", "D")];
        let c = DependencyClosure::new(&deps);
        assert!(c.depends(&"S".into(), &"D".into()));
        assert!(!c.independent(&"D".into(), &"S".into()));
        assert!(c.independent(&"S".into(), &"G".into()));
    }
}
