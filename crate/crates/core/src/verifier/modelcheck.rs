//! Exhaustive state-space exploration on small graphs.
//!
//! Matching: every interpreted configuration (each pointer null or one of the
//! node's ports), every nonempty daemon selection of enabled nodes, and every
//! outcome of each randomized command. Checked: the potential never decreases,
//! maximal-matching configurations stay maximal, stable configurations are
//! exactly the maximal matchings with all unmatched pointers null, and a
//! stable configuration is reachable from everywhere.
//!
//! Link naming: every register assignment over a bounded value domain and
//! every cyclic cursor, explored with all daemon selections. Checked: the
//! reachable graph is acyclic, every execution is silent within `20m` moves,
//! and silent states are exactly the ones satisfying the naming
//! specification.
//!
//! Bounding registers to `0..=deg+1` is sound for these checks: the rules only
//! compare values for equality and test membership in `1..=deg`, so the two
//! out-of-range values `0` and `deg+1` stand in for all garbage.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::daemon::PolicyKind;
use crate::engine::{Change, Draw, Layer};
use crate::linkname::{is_stable_a2, next_action, perform_scheduled, LinkAction, NodeMachine, Phase, RegisterFile};
use crate::matching::{local_view, MatchingConfiguration, Rule};
use crate::topology::{AnonymousGraph, Port};
use crate::trace::{Algorithm, InitialState, Selected, Trace, TraceEvent, TraceHeader};

use super::{brute_force_maximal_matchings, check_ln, check_m, matched_pairs, potential, EdgeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum McAlgorithm {
    A1,
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub max_nodes_a1: usize,
    pub max_edges_a2: usize,
    pub max_states: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            max_nodes_a1: 4,
            max_edges_a2: 3,
            max_states: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct McReport {
    pub algorithm: McAlgorithm,
    /// Configurations enumerated as starting points.
    pub initial_states: usize,
    /// All states visited (equal to `initial_states` for matching).
    pub states: usize,
    pub transitions: u64,
    pub stable_states: usize,
    /// Matching only: maximal-matching configurations that still have an
    /// abandonment pending.
    pub legitimate_unstable: usize,
    /// Link naming only: the longest execution, in moves.
    pub longest_execution: Option<u64>,
    pub move_bound: Option<u64>,
    pub closure_ok: bool,
    pub monotonicity_ok: bool,
    pub stable_characterization_ok: bool,
    pub convergence_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub property: String,
    /// Replayable trace from the offending starting configuration.
    pub trace: Trace,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum McError {
    #[error("state space too large: {0}")]
    TooLarge(String),
    #[error("property violated: {}", .0.property)]
    Counterexample(Box<Counterexample>),
}

pub fn model_check(g: &AnonymousGraph, algorithm: McAlgorithm, opts: &McOptions) -> Result<McReport, McError> {
    match algorithm {
        McAlgorithm::A1 => check_matching(g, opts),
        McAlgorithm::A2 => check_naming(g, opts),
    }
}

fn header(g: &AnonymousGraph, algorithm: Algorithm, initial: InitialState) -> TraceHeader {
    TraceHeader {
        algorithm,
        interleaved: false,
        seed: 0,
        policy: PolicyKind::Replay,
        faults: "model-check".into(),
        n: g.node_count(),
        edges: g.edge_specs(),
        initial,
    }
}

fn counterexample(property: impl Into<String>, trace: Trace) -> McError {
    McError::Counterexample(Box::new(Counterexample {
        property: property.into(),
        trace,
    }))
}

/// Mixed-radix codec for matching configurations.
struct PointerSpace {
    choices: Vec<Vec<Option<Port>>>,
}

impl PointerSpace {
    fn new(g: &AnonymousGraph) -> Self {
        PointerSpace {
            choices: (0..g.node_count())
                .map(|u| std::iter::once(None).chain(g.ports_of(u).into_iter().map(Some)).collect())
                .collect(),
        }
    }

    fn size(&self) -> Option<usize> {
        self.choices.iter().try_fold(1usize, |acc, c| acc.checked_mul(c.len()))
    }

    fn decode(&self, mut code: usize) -> Vec<Option<Port>> {
        self.choices
            .iter()
            .map(|c| {
                let v = c[code % c.len()];
                code /= c.len();
                v
            })
            .collect()
    }

    fn encode(&self, ptrs: &[Option<Port>]) -> usize {
        let mut code = 0;
        for (c, p) in self.choices.iter().zip(ptrs).rev() {
            code = code * c.len() + c.iter().position(|x| x == p).expect("pointer in space");
        }
        code
    }
}

/// One transition: selected rules and the pointer each selected node ends with.
type Move = Vec<(usize, Rule, Option<Port>)>;

fn matching_event(g: &AnonymousGraph, cfg: &MatchingConfiguration, mv: &Move) -> TraceEvent {
    let mut draws = Vec::new();
    let mut changes = Vec::new();
    let mut next = cfg.clone();
    for &(u, rule, new) in mv {
        if rule == Rule::Seduction {
            match new {
                None => draws.push(Draw::Coin(false)),
                Some(p) => {
                    let free: Vec<Port> = local_view(g, cfg, u)
                        .outcomes(Rule::Seduction)
                        .into_iter()
                        .flatten()
                        .collect();
                    draws.push(Draw::Coin(true));
                    draws.push(Draw::Pick {
                        of: free.len(),
                        index: free.iter().position(|x| *x == p).expect("outcome"),
                    });
                }
            }
        }
        let new = new.map(u64::from);
        changes.push(Change::Beta {
            node: u,
            old: cfg.beta[u],
            new,
        });
        next.beta[u] = new;
    }
    TraceEvent {
        step: 0,
        layer: Layer::A1,
        selections: mv
            .iter()
            .map(|(u, r, _)| Selected {
                node: *u,
                action: r.to_string(),
            })
            .collect(),
        draws,
        changes,
        potential: Some(potential(g, &next)),
    }
}

fn check_matching(g: &AnonymousGraph, opts: &McOptions) -> Result<McReport, McError> {
    let n = g.node_count();
    if n > opts.max_nodes_a1 {
        return Err(McError::TooLarge(format!("{n} nodes, limit {}", opts.max_nodes_a1)));
    }
    let space = PointerSpace::new(g);
    let size = space
        .size()
        .filter(|&s| s <= opts.max_states)
        .ok_or_else(|| McError::TooLarge(format!("more than {} configurations", opts.max_states)))?;
    let maximal = brute_force_maximal_matchings(g).map_err(|e| McError::TooLarge(e.to_string()))?;
    let trace_of = |cfg: &MatchingConfiguration, events: Vec<TraceEvent>| Trace {
        header: header(
            g,
            Algorithm::A1,
            InitialState {
                beta: Some(cfg.clone()),
                registers: None,
            },
        ),
        events,
    };

    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); size];
    let mut stable = vec![false; size];
    let mut transitions = 0u64;
    let mut stable_matchings: BTreeSet<EdgeSet> = BTreeSet::new();
    let mut legitimate_unstable = 0;
    for code in 0..size {
        let ptrs = space.decode(code);
        let cfg = MatchingConfiguration::from_ports(&ptrs);
        let f0 = potential(g, &cfg);
        let legit = check_m(g, &cfg).passed();
        let views: Vec<_> = (0..n).map(|u| local_view(g, &cfg, u)).collect();
        let enabled: Vec<(usize, Rule)> = views
            .iter()
            .enumerate()
            .filter_map(|(u, v)| v.enabled_rule().map(|r| (u, r)))
            .collect();
        let pairs = matched_pairs(g, &cfg);
        let tidy = (0..n).all(|u| ptrs[u].is_none() || pairs.iter().any(|&(a, b)| a == u || b == u));
        if enabled.is_empty() {
            stable[code] = true;
            if !legit || !tidy {
                return Err(counterexample("stable configuration violates the matching specification", trace_of(&cfg, vec![])));
            }
            stable_matchings.insert(pairs.into_iter().collect());
            continue;
        }
        if legit && tidy {
            return Err(counterexample(
                "tidy maximal-matching configuration is not stable",
                trace_of(&cfg, vec![]),
            ));
        }
        if legit {
            legitimate_unstable += 1;
        }
        let outcomes: Vec<Vec<Option<Port>>> = enabled.iter().map(|&(u, r)| views[u].outcomes(r)).collect();
        let mut succ_seen = BTreeSet::new();
        for mask in 1u32..(1 << enabled.len()) {
            let chosen: Vec<usize> = (0..enabled.len()).filter(|i| mask >> i & 1 == 1).collect();
            // odometer over the outcome lists of the chosen nodes
            let mut digits = vec![0usize; chosen.len()];
            loop {
                let mut next = ptrs.clone();
                let mv: Move = chosen
                    .iter()
                    .zip(&digits)
                    .map(|(&i, &d)| {
                        let (u, r) = enabled[i];
                        let p = outcomes[i][d];
                        next[u] = p;
                        (u, r, p)
                    })
                    .collect();
                transitions += 1;
                let next_cfg = MatchingConfiguration::from_ports(&next);
                let f1 = potential(g, &next_cfg);
                if f1 < f0 {
                    return Err(counterexample(
                        format!("potential decreased from {f0} to {f1}"),
                        trace_of(&cfg, vec![matching_event(g, &cfg, &mv)]),
                    ));
                }
                if legit && !check_m(g, &next_cfg).passed() {
                    return Err(counterexample(
                        "transition leaves the maximal matchings",
                        trace_of(&cfg, vec![matching_event(g, &cfg, &mv)]),
                    ));
                }
                let succ = space.encode(&next);
                if succ_seen.insert(succ) {
                    preds[succ].push(code as u32);
                }
                // advance odometer
                let mut k = 0;
                while k < digits.len() {
                    digits[k] += 1;
                    if digits[k] < outcomes[chosen[k]].len() {
                        break;
                    }
                    digits[k] = 0;
                    k += 1;
                }
                if k == digits.len() {
                    break;
                }
            }
        }
    }
    if stable_matchings != maximal {
        return Err(counterexample(
            format!(
                "stable configurations give {} matchings, brute force finds {}",
                stable_matchings.len(),
                maximal.len()
            ),
            trace_of(&MatchingConfiguration::all_null(n), vec![]),
        ));
    }
    // backward reachability from the stable set
    let mut reach = stable.clone();
    let mut queue: VecDeque<usize> = (0..size).filter(|&c| stable[c]).collect();
    while let Some(c) = queue.pop_front() {
        for &p in &preds[c] {
            if !reach[p as usize] {
                reach[p as usize] = true;
                queue.push_back(p as usize);
            }
        }
    }
    if let Some(bad) = reach.iter().position(|r| !r) {
        let cfg = MatchingConfiguration::from_ports(&space.decode(bad));
        return Err(counterexample("no stable configuration is reachable", trace_of(&cfg, vec![])));
    }
    Ok(McReport {
        algorithm: McAlgorithm::A1,
        initial_states: size,
        states: size,
        transitions,
        stable_states: stable.iter().filter(|s| **s).count(),
        legitimate_unstable,
        longest_execution: None,
        move_bound: None,
        closure_ok: true,
        monotonicity_ok: true,
        stable_characterization_ok: true,
        convergence_ok: true,
    })
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct NamingState {
    regs: RegisterFile,
    machines: Vec<NodeMachine>,
}

enum Mark {
    OnStack,
    Done { longest: u64, best: u32 },
}

struct NamingExplorer<'g> {
    g: &'g AnonymousGraph,
    memo: HashMap<NamingState, Mark>,
    transitions: u64,
    max_states: usize,
}

impl NamingExplorer<'_> {
    fn enabled(&self, s: &NamingState) -> Vec<(usize, LinkAction)> {
        (0..self.g.node_count())
            .filter_map(|u| next_action(self.g, &s.regs, u, &s.machines[u]).map(|a| (u, a)))
            .collect()
    }

    fn successor(&self, s: &NamingState, enabled: &[(usize, LinkAction)], mask: u32) -> (NamingState, Vec<Change>) {
        let mut next = s.clone();
        let mut changes = Vec::new();
        for (i, &(u, a)) in enabled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                let ch = perform_scheduled(self.g, &mut next.regs, u, &mut next.machines[u], a).expect("enabled action");
                changes.extend(ch);
            }
        }
        (next, changes)
    }

    /// Longest execution from `s`, in moves. Errors carry the property name.
    fn longest(&mut self, s: &NamingState) -> Result<u64, String> {
        match self.memo.get(s) {
            Some(Mark::Done { longest, .. }) => return Ok(*longest),
            Some(Mark::OnStack) => return Err("cycle in the naming state graph".into()),
            None => {}
        }
        if self.memo.len() >= self.max_states {
            return Err(format!("state limit {} reached", self.max_states));
        }
        let idle = s.machines.iter().all(|m| m.phase == Phase::Idle);
        let enabled = self.enabled(s);
        if idle {
            let stable = is_stable_a2(self.g, &s.regs);
            if stable != check_ln(self.g, &s.regs).passed() {
                return Err("stable registers disagree with the naming specification".into());
            }
            if stable && !enabled.is_empty() {
                return Err("a settled state still has enabled actions".into());
            }
        }
        if enabled.is_empty() && !(idle && is_stable_a2(self.g, &s.regs)) {
            return Err("execution stops in a state that is not silent".into());
        }
        self.memo.insert(s.clone(), Mark::OnStack);
        let mut best = (0u64, 0u32);
        for mask in 1u32..(1 << enabled.len()) {
            self.transitions += 1;
            let (next, _) = self.successor(s, &enabled, mask);
            let len = mask.count_ones() as u64 + self.longest(&next)?;
            if len > best.0 {
                best = (len, mask);
            }
        }
        self.memo.insert(
            s.clone(),
            Mark::Done {
                longest: best.0,
                best: best.1,
            },
        );
        Ok(best.0)
    }

    /// Replays the longest execution from `s` as trace events.
    fn longest_path(&self, s: &NamingState) -> Vec<TraceEvent> {
        let mut out = Vec::new();
        let mut cur = s.clone();
        while let Some(Mark::Done { best, .. }) = self.memo.get(&cur) {
            if *best == 0 {
                break;
            }
            let enabled = self.enabled(&cur);
            let (next, changes) = self.successor(&cur, &enabled, *best);
            out.push(TraceEvent {
                step: out.len() as u64,
                layer: Layer::A2,
                selections: enabled
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| best >> i & 1 == 1)
                    .map(|(_, (u, a))| Selected {
                        node: *u,
                        action: a.to_string(),
                    })
                    .collect(),
                draws: vec![],
                changes,
                potential: None,
            });
            cur = next;
        }
        out
    }
}

/// Every register file over the bounded domain: `link(u,·)` in `0..=deg(u)+1`
/// and `img(u,a)` in `0..=deg(v)+1` for the neighbor `v` it mirrors.
fn register_domain(g: &AnonymousGraph) -> Vec<(usize, bool, usize, u64)> {
    let mut slots = Vec::new();
    for u in 0..g.node_count() {
        for (i, l) in g.links(u).iter().enumerate() {
            slots.push((u, true, i, g.degree(u) as u64 + 1));
            slots.push((u, false, i, g.degree(l.neighbor) as u64 + 1));
        }
    }
    slots
}

fn check_naming(g: &AnonymousGraph, opts: &McOptions) -> Result<McReport, McError> {
    let m = g.edge_count();
    if m > opts.max_edges_a2 {
        return Err(McError::TooLarge(format!("{m} edges, limit {}", opts.max_edges_a2)));
    }
    let slots = register_domain(g);
    let cursor_counts: Vec<usize> = (0..g.node_count()).map(|u| g.degree(u).max(1)).collect();
    let reg_count = slots
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.3 as usize + 1));
    let total = reg_count
        .and_then(|r| cursor_counts.iter().try_fold(r, |acc, &c| acc.checked_mul(c)))
        .filter(|&t| t <= opts.max_states)
        .ok_or_else(|| McError::TooLarge(format!("more than {} initial states", opts.max_states)))?;
    let bound = 20 * m as u64;
    let mut ex = NamingExplorer {
        g,
        memo: HashMap::new(),
        transitions: 0,
        max_states: opts.max_states,
    };
    let mut longest_overall = 0;
    let mut stable_states = 0;
    for code in 0..total {
        let mut rest = code;
        let mut regs = RegisterFile::zeroed(g);
        for &(u, is_link, i, top) in &slots {
            let v = (rest % (top as usize + 1)) as u64;
            rest /= top as usize + 1;
            if is_link {
                regs.link[u][i] = v;
            } else {
                regs.img[u][i] = v;
            }
        }
        let machines: Vec<NodeMachine> = cursor_counts
            .iter()
            .map(|&c| {
                let cursor = rest % c;
                rest /= c;
                NodeMachine {
                    phase: Phase::Idle,
                    cursor,
                }
            })
            .collect();
        let state = NamingState { regs, machines };
        let trace_of = |events| Trace {
            header: header(
                g,
                Algorithm::A2,
                InitialState {
                    beta: None,
                    registers: Some(state.regs.clone()),
                },
            ),
            events,
        };
        let len = match ex.longest(&state) {
            Ok(len) => len,
            Err(e) if e.starts_with("state limit") => return Err(McError::TooLarge(e)),
            Err(e) => return Err(counterexample(e, trace_of(vec![]))),
        };
        if len > bound {
            return Err(counterexample(
                format!("execution of {len} moves exceeds 20m = {bound}"),
                trace_of(ex.longest_path(&state)),
            ));
        }
        if len == 0 {
            stable_states += 1;
        }
        longest_overall = longest_overall.max(len);
    }
    Ok(McReport {
        algorithm: McAlgorithm::A2,
        initial_states: total,
        states: ex.memo.len(),
        transitions: ex.transitions,
        stable_states,
        legitimate_unstable: 0,
        longest_execution: Some(longest_overall),
        move_bound: Some(bound),
        closure_ok: true,
        monotonicity_ok: true,
        stable_characterization_ok: true,
        convergence_ok: true,
    })
}
