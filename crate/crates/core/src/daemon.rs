//! The distributed daemon: each transition selects a nonempty set of enabled
//! actions, at most one per process.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of candidate subsets the greedy adversary scores per step.
pub const ADVERSARY_CANDIDATES: usize = 32;

/// Enabled actions of one process. `weight` scores how much selecting the
/// process helps convergence; the greedy adversary minimizes it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enabled<A> {
    pub node: usize,
    pub actions: Vec<A>,
    pub weight: u32,
}

/// Enabled actions per process, ascending by node. Processes with nothing
/// enabled are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnabledMap<A> {
    entries: Vec<Enabled<A>>,
}

impl<A: Ord> EnabledMap<A> {
    pub fn new(mut entries: Vec<Enabled<A>>) -> Self {
        entries.retain(|e| !e.actions.is_empty());
        entries.sort_by_key(|e| e.node);
        for e in &mut entries {
            e.actions.sort();
        }
        EnabledMap { entries }
    }
}

impl<A> EnabledMap<A> {
    pub fn entries(&self) -> &[Enabled<A>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, node: usize) -> Option<&Enabled<A>> {
        self.entries
            .binary_search_by_key(&node, |e| e.node)
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// Selected `(node, action)` pairs, ascending by node.
pub type Selection<A> = Vec<(usize, A)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Synchronous,
    RandomSubset,
    RandomSequential,
    AdversarialGreedy,
    Replay,
}

impl PolicyKind {
    /// The four policies that generate their own schedules.
    pub const LIVE: [PolicyKind; 4] = [
        PolicyKind::Synchronous,
        PolicyKind::RandomSubset,
        PolicyKind::RandomSequential,
        PolicyKind::AdversarialGreedy,
    ];
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Synchronous => "sync",
            PolicyKind::RandomSubset => "subset",
            PolicyKind::RandomSequential => "seq",
            PolicyKind::AdversarialGreedy => "adversarial",
            PolicyKind::Replay => "replay",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sync" | "synchronous" => PolicyKind::Synchronous,
            "subset" | "random_subset" => PolicyKind::RandomSubset,
            "seq" | "random_sequential" => PolicyKind::RandomSequential,
            "adversarial" | "adversarial_greedy" => PolicyKind::AdversarialGreedy,
            "replay" => PolicyKind::Replay,
            other => return Err(format!("unknown daemon policy {other:?}")),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DaemonError {
    #[error("replay exhausted after {0} recorded selections")]
    ReplayExhausted(usize),
    #[error("replay step {step}: recorded selection {detail} is not enabled")]
    ReplayInconsistent { step: usize, detail: String },
    #[error("replay step {0}: recorded selection is empty or repeats a node")]
    ReplayMalformed(usize),
}

pub struct Daemon<A> {
    kind: PolicyKind,
    rng: ChaCha8Rng,
    script: VecDeque<Selection<A>>,
    replayed: usize,
}

impl<A: Clone + Ord + fmt::Display> Daemon<A> {
    pub fn new(kind: PolicyKind, rng: ChaCha8Rng) -> Self {
        Daemon {
            kind,
            rng,
            script: VecDeque::new(),
            replayed: 0,
        }
    }

    /// A replay daemon that re-issues `script` one selection per step.
    pub fn replay(script: Vec<Selection<A>>, rng: ChaCha8Rng) -> Self {
        Daemon {
            kind: PolicyKind::Replay,
            rng,
            script: script.into(),
            replayed: 0,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Selects the next set of moves. `Ok(None)` means nothing is enabled:
    /// the configuration is stable.
    pub fn select(&mut self, enabled: &EnabledMap<A>) -> Result<Option<Selection<A>>, DaemonError> {
        if enabled.is_empty() {
            return Ok(None);
        }
        let entries = enabled.entries();
        let pick = |idx: &[usize]| -> Selection<A> {
            idx.iter()
                .map(|&i| (entries[i].node, entries[i].actions[0].clone()))
                .collect()
        };
        let chosen = match self.kind {
            PolicyKind::Synchronous => pick(&(0..entries.len()).collect::<Vec<_>>()),
            PolicyKind::RandomSequential => {
                let i = self.rng.gen_range(0..entries.len());
                pick(&[i])
            }
            PolicyKind::RandomSubset => {
                let idx = random_subset(&mut self.rng, entries.len());
                pick(&idx)
            }
            PolicyKind::AdversarialGreedy => {
                let idx = self.adversarial(entries);
                pick(&idx)
            }
            PolicyKind::Replay => {
                let step = self.replayed;
                let sel = self
                    .script
                    .pop_front()
                    .ok_or(DaemonError::ReplayExhausted(step))?;
                self.replayed += 1;
                let nodes: BTreeSet<usize> = sel.iter().map(|(n, _)| *n).collect();
                if sel.is_empty() || nodes.len() != sel.len() {
                    return Err(DaemonError::ReplayMalformed(step));
                }
                for (node, action) in &sel {
                    let ok = enabled
                        .get(*node)
                        .is_some_and(|e| e.actions.contains(action));
                    if !ok {
                        return Err(DaemonError::ReplayInconsistent {
                            step,
                            detail: format!("({node}, {action})"),
                        });
                    }
                }
                let mut sel = sel;
                sel.sort_by_key(|(n, _)| *n);
                sel
            }
        };
        Ok(Some(chosen))
    }

    /// Samples candidate subsets and keeps the one selecting the least total
    /// weight, preferring larger subsets among equals.
    fn adversarial(&mut self, entries: &[Enabled<A>]) -> Vec<usize> {
        let len = entries.len();
        let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(ADVERSARY_CANDIDATES);
        let zero: Vec<usize> = (0..len).filter(|&i| entries[i].weight == 0).collect();
        if !zero.is_empty() {
            candidates.push(zero);
        }
        let min_w = entries.iter().map(|e| e.weight).min().unwrap_or(0);
        let lightest: Vec<usize> = (0..len).filter(|&i| entries[i].weight == min_w).collect();
        candidates.push(vec![lightest[self.rng.gen_range(0..lightest.len())]]);
        while candidates.len() < ADVERSARY_CANDIDATES {
            candidates.push(random_subset(&mut self.rng, len));
        }
        let score = |c: &Vec<usize>| -> u64 { c.iter().map(|&i| entries[i].weight as u64).sum() };
        let mut best = 0;
        for i in 1..candidates.len() {
            let (s, b) = (score(&candidates[i]), score(&candidates[best]));
            if s < b || (s == b && candidates[i].len() > candidates[best].len()) {
                best = i;
            }
        }
        candidates.swap_remove(best)
    }
}

/// Each index kept independently with probability ½, redrawn while empty.
fn random_subset(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    loop {
        let idx: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.5)).collect();
        if !idx.is_empty() {
            return idx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn map(nodes: &[(usize, &[&'static str], u32)]) -> EnabledMap<&'static str> {
        EnabledMap::new(
            nodes
                .iter()
                .map(|(n, a, w)| Enabled {
                    node: *n,
                    actions: a.to_vec(),
                    weight: *w,
                })
                .collect(),
        )
    }

    fn daemon(kind: PolicyKind, seed: u64) -> Daemon<&'static str> {
        Daemon::new(kind, stream(seed, Stream::Daemon))
    }

    #[test]
    fn single_enabled_node_is_forced() {
        let m = map(&[(3, &["marriage"], 1)]);
        for kind in PolicyKind::LIVE {
            let sel = daemon(kind, 1).select(&m).unwrap().unwrap();
            assert_eq!(sel, vec![(3, "marriage")]);
        }
    }

    #[test]
    fn synchronous_selects_everyone() {
        let m = map(&[(0, &["seduction"], 1), (1, &["seduction"], 1)]);
        let sel = daemon(PolicyKind::Synchronous, 0).select(&m).unwrap().unwrap();
        assert_eq!(sel, vec![(0, "seduction"), (1, "seduction")]);
    }

    #[test]
    fn first_action_in_order_wins() {
        let m = map(&[(0, &["b", "a"], 0)]);
        let sel = daemon(PolicyKind::Synchronous, 0).select(&m).unwrap().unwrap();
        assert_eq!(sel, vec![(0, "a")]);
    }

    #[test]
    fn empty_map_signals_stable() {
        let m = map(&[]);
        assert_eq!(daemon(PolicyKind::RandomSubset, 0).select(&m), Ok(None));
    }

    #[test]
    fn adversary_avoids_progress_nodes() {
        let m = map(&[(0, &["x"], 1), (1, &["x"], 0), (2, &["x"], 0)]);
        let sel = daemon(PolicyKind::AdversarialGreedy, 9).select(&m).unwrap().unwrap();
        assert_eq!(sel, vec![(1, "x"), (2, "x")]);
    }

    #[test]
    fn replay_checks_consistency() {
        let m = map(&[(0, &["x"], 0)]);
        let mut d = Daemon::replay(vec![vec![(0, "x")], vec![(1, "x")]], stream(0, Stream::Daemon));
        assert_eq!(d.select(&m).unwrap().unwrap(), vec![(0, "x")]);
        assert!(matches!(d.select(&m), Err(DaemonError::ReplayInconsistent { step: 1, .. })));
        assert_eq!(d.select(&m), Err(DaemonError::ReplayExhausted(2)));
    }

    proptest! {
        #[test]
        fn selections_are_legal_and_deterministic(
            nodes in proptest::collection::btree_set(0usize..40, 1..20),
            weights in proptest::collection::vec(0u32..3, 20),
            seed: u64,
            k in 0usize..4,
        ) {
            let entries: Vec<Enabled<u8>> = nodes.iter().enumerate()
                .map(|(i, &n)| Enabled { node: n, actions: vec![1, 0], weight: weights[i] })
                .collect();
            let m = EnabledMap::new(entries);
            let kind = PolicyKind::LIVE[k];
            let mut d1: Daemon<u8> = Daemon::new(kind, stream(seed, Stream::Daemon));
            let mut d2: Daemon<u8> = Daemon::new(kind, stream(seed, Stream::Daemon));
            for _ in 0..5 {
                let s1 = d1.select(&m).unwrap().unwrap();
                let s2 = d2.select(&m).unwrap().unwrap();
                prop_assert_eq!(&s1, &s2);
                prop_assert!(!s1.is_empty());
                let distinct: BTreeSet<usize> = s1.iter().map(|(n, _)| *n).collect();
                prop_assert_eq!(distinct.len(), s1.len());
                for (n, a) in &s1 {
                    prop_assert!(nodes.contains(n));
                    prop_assert_eq!(*a, 0);
                }
                if kind == PolicyKind::RandomSequential { prop_assert_eq!(s1.len(), 1); }
                if kind == PolicyKind::Synchronous { prop_assert_eq!(s1.len(), nodes.len()); }
            }
        }
    }
}
