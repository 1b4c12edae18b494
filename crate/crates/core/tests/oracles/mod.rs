//! Independent reference implementations. They are deliberately naive:
//! brute force, fixpoint rewriting and character scanning, sharing no code
//! with the library beyond its data types.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};

use flare_core::coverage::TraceNode;
use flare_core::rng::FlareRng;
use flare_core::spec::{AgentId, Dependency};

pub fn agents(n: usize) -> Vec<AgentId> {
    (0..n).map(|i| AgentId::from(format!("a{i}"))).collect()
}

/// Every permutation of `items`, in no particular order.
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

pub fn respects(order: &[AgentId], deps: &[Dependency]) -> bool {
    let pos = |a: &AgentId| order.iter().position(|x| x == a).expect("agent in order");
    deps.iter().all(|d| pos(&d.before) < pos(&d.after))
}

/// Brute-force path space, as a set.
pub fn legal_orders(agents: &[AgentId], deps: &[Dependency]) -> BTreeSet<Vec<AgentId>> {
    permutations(agents)
        .into_iter()
        .filter(|p| respects(p, deps))
        .collect()
}

/// Random acyclic constraints: edges only go forward in a shuffled order.
pub fn random_dag(agents: &[AgentId], density: f64, rng: &mut FlareRng) -> Vec<Dependency> {
    let mut order = agents.to_vec();
    for i in (1..order.len()).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
    let mut deps = Vec::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.unit() < density {
                deps.push(Dependency::new(order[i].clone(), order[j].clone()));
            }
        }
    }
    deps
}

/// Transitive reachability by repeated edge relaxation.
pub fn reaches(from: &AgentId, to: &AgentId, deps: &[Dependency]) -> bool {
    let mut seen: HashSet<AgentId> = HashSet::from([from.clone()]);
    let mut changed = true;
    while changed {
        changed = false;
        for d in deps {
            if seen.contains(&d.before) && seen.insert(d.after.clone()) {
                changed = true;
            }
        }
    }
    from != to && seen.contains(to)
}

pub fn independent(a: &AgentId, b: &AgentId, deps: &[Dependency]) -> bool {
    a != b && !reaches(a, b, deps) && !reaches(b, a, deps)
}

/// Relaxation as a rewrite system run to a fixpoint: delete a tool node, or
/// delete the second of two equal adjacent turns, until neither applies.
pub fn rewrite_relax(trace: &[TraceNode]) -> Vec<AgentId> {
    let mut t = trace.to_vec();
    while let Some(i) = t.iter().position(|n| matches!(n, TraceNode::Tool(_))) {
        t.remove(i);
    }
    loop {
        let dup = t.windows(2).position(|w| w[0] == w[1]);
        match dup {
            Some(i) => {
                t.remove(i + 1);
            }
            None => break,
        }
    }
    t.into_iter()
        .map(|n| match n {
            TraceNode::Turn(a) | TraceNode::Tool(a) => a,
        })
        .collect()
}

/// Breadth-first search over adjacent swaps of independent agents.
pub fn swap_reachable(from: &[AgentId], to: &[AgentId], deps: &[Dependency]) -> bool {
    if from.len() != to.len() {
        return false;
    }
    let mut seen: HashSet<Vec<AgentId>> = HashSet::from([from.to_vec()]);
    let mut queue = VecDeque::from([from.to_vec()]);
    while let Some(w) = queue.pop_front() {
        if w == to {
            return true;
        }
        for i in 0..w.len().saturating_sub(1) {
            if independent(&w[i], &w[i + 1], deps) {
                let mut next = w.clone();
                next.swap(i, i + 1);
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    false
}

/// Exact match first, then a swap-reachable one; lowest index wins.
pub fn brute_match(
    trace: &[AgentId],
    paths: &[Vec<AgentId>],
    deps: &[Dependency],
) -> Option<(usize, bool)> {
    if let Some(i) = paths.iter().position(|p| p == trace) {
        return Some((i, false));
    }
    paths
        .iter()
        .position(|p| swap_reachable(trace, p, deps))
        .map(|i| (i, true))
}

fn latin_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn cjk_terminator(c: char) -> bool {
    matches!(c, '。' | '！' | '？')
}

/// Character-scanning sentence splitter: a run of `.!?` ends a sentence when
/// followed by whitespace or the end; a run of CJK terminators always does.
pub fn reference_split(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if latin_terminator(c) || cjk_terminator(c) {
            let cjk = cjk_terminator(c);
            let mut j = i;
            while j < chars.len()
                && (if cjk {
                    cjk_terminator(chars[j])
                } else {
                    latin_terminator(chars[j])
                })
            {
                current.push(chars[j]);
                j += 1;
            }
            let at_break = j == chars.len() || chars[j].is_whitespace();
            if cjk || at_break {
                let s = current.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                current.clear();
            }
            i = j;
            continue;
        }
        current.push(c);
        i += 1;
    }
    let rest = current.trim().to_string();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// 1-based median index ⌈k/2⌉ computed without integer tricks.
pub fn median_position(k: usize) -> usize {
    let mut m = 0;
    while 2 * m < k {
        m += 1;
    }
    m
}
