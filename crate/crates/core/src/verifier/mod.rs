//! Specification checkers, the matching potential, node classes, the
//! high-probability move bound, and exhaustive oracles.

mod modelcheck;
mod monitor;

pub use modelcheck::{model_check, Counterexample, McAlgorithm, McError, McOptions, McReport};
pub use monitor::{analyze_trace, monitor_trace, IncreaseTally, TraceAnalysis, Violation, ViolationKind};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkname::{guard_r0_holds, RegisterFile};
use crate::matching::{pointer, MatchingConfiguration};
use crate::topology::AnonymousGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifierError {
    #[error("failure probability must be in (0, 1], got {0}")]
    EpsOutOfRange(f64),
    #[error("node count must be at least 1")]
    NoNodes,
    #[error("exhaustive search limited to {cap} nodes, graph has {n}")]
    TooLarge { n: usize, cap: usize },
}

/// `(good, almost_good)` edge counts. The derived order is lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Potential {
    pub good: usize,
    pub almost_good: usize,
}

impl From<(usize, usize)> for Potential {
    fn from((good, almost_good): (usize, usize)) -> Self {
        Potential { good, almost_good }
    }
}

impl From<Potential> for (usize, usize) {
    fn from(p: Potential) -> Self {
        (p.good, p.almost_good)
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.good, self.almost_good)
    }
}

pub fn lex_le(p: Potential, q: Potential) -> bool {
    p.good < q.good || (p.good == q.good && p.almost_good <= q.almost_good)
}

/// Node `u`'s pointer resolved to a neighbor index.
fn target(g: &AnonymousGraph, c: &MatchingConfiguration, u: usize) -> Option<usize> {
    pointer(g, c, u).map(|p| g.link(u, p).expect("interpreted pointers are own ports").neighbor)
}

pub fn potential(g: &AnonymousGraph, c: &MatchingConfiguration) -> Potential {
    let mut p = Potential::default();
    for u in 0..g.node_count() {
        if let Some(v) = target(g, c, u) {
            match target(g, c, v) {
                Some(w) if w == u && u < v => p.good += 1,
                None => p.almost_good += 1,
                _ => {}
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    /// Null pointer, nobody points here.
    Single,
    /// Null pointer, some neighbor points here.
    Indecisive,
    InGoodEdge,
    PointingOut,
}

impl NodeClass {
    pub fn is_progress(self) -> bool {
        matches!(self, NodeClass::Single | NodeClass::Indecisive)
    }
}

pub fn classify(g: &AnonymousGraph, c: &MatchingConfiguration, u: usize) -> NodeClass {
    match target(g, c, u) {
        None => {
            let pointed = g.links(u).iter().any(|l| target(g, c, l.neighbor) == Some(u));
            if pointed {
                NodeClass::Indecisive
            } else {
                NodeClass::Single
            }
        }
        Some(v) if target(g, c, v) == Some(u) => NodeClass::InGoodEdge,
        Some(_) => NodeClass::PointingOut,
    }
}

/// Edges `(u, v)`, `u < v`, whose endpoints point at each other.
pub fn matched_pairs(g: &AnonymousGraph, c: &MatchingConfiguration) -> Vec<(usize, usize)> {
    (0..g.node_count())
        .filter_map(|u| {
            let v = target(g, c, u)?;
            (u < v && target(g, c, v) == Some(u)).then_some((u, v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Witness {
    Node(usize),
    Edge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    Pass,
    Fail(Witness),
}

impl Clause {
    pub fn passed(self) -> bool {
        self == Clause::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingReport {
    /// Every matched pair is a graph edge.
    pub m1: Clause,
    /// No node is in two pairs.
    pub m2: Clause,
    /// Every edge has a matched endpoint.
    pub m3: Clause,
}

impl MatchingReport {
    pub fn passed(&self) -> bool {
        self.m1.passed() && self.m2.passed() && self.m3.passed()
    }
}

pub fn check_m(g: &AnonymousGraph, c: &MatchingConfiguration) -> MatchingReport {
    check_pairs(g, &matched_pairs(g, c))
}

/// Maximal-matching check of an arbitrary pair set.
pub fn check_pairs(g: &AnonymousGraph, pairs: &[(usize, usize)]) -> MatchingReport {
    let n = g.node_count();
    let m1 = pairs
        .iter()
        .find(|(u, v)| !g.has_edge(*u, *v))
        .map_or(Clause::Pass, |&(u, v)| Clause::Fail(Witness::Edge(u, v)));
    let mut covered = vec![0usize; n];
    for &(u, v) in pairs {
        for x in [u, v] {
            if x < n {
                covered[x] += 1;
            }
        }
    }
    let m2 = covered
        .iter()
        .position(|&k| k > 1)
        .map_or(Clause::Pass, |x| Clause::Fail(Witness::Node(x)));
    let m3 = g
        .edges()
        .iter()
        .find(|e| covered[e.u] == 0 && covered[e.v] == 0)
        .map_or(Clause::Pass, |e| Clause::Fail(Witness::Edge(e.u, e.v)));
    MatchingReport { m1, m2, m3 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingReport {
    /// Each node's link names are exactly `1..=degree`.
    pub ln1: Clause,
    /// Each side's `img` equals the other side's `link`.
    pub ln2: Clause,
}

impl NamingReport {
    pub fn passed(&self) -> bool {
        self.ln1.passed() && self.ln2.passed()
    }
}

pub fn check_ln(g: &AnonymousGraph, regs: &RegisterFile) -> NamingReport {
    let ln1 = (0..g.node_count())
        .find(|&u| guard_r0_holds(&regs.link[u]))
        .map_or(Clause::Pass, |u| Clause::Fail(Witness::Node(u)));
    let ln2 = g
        .edges()
        .iter()
        .find(|e| {
            let a = g.port_index(e.u, e.port_u).expect("edge port");
            let b = g.port_index(e.v, e.port_v).expect("edge port");
            regs.img[e.u][a] != regs.link[e.v][b] || regs.img[e.v][b] != regs.link[e.u][a]
        })
        .map_or(Clause::Pass, |e| Clause::Fail(Witness::Edge(e.u, e.v)));
    NamingReport { ln1, ln2 }
}

/// Smallest move count `k` after which the matching algorithm has converged
/// with probability above `1 - eps`: `max{4(n+1)^3, -32(n+1) ln eps}`, rounded up.
pub fn k_bound(n: usize, eps: f64) -> Result<u64, VerifierError> {
    if n == 0 {
        return Err(VerifierError::NoNodes);
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(VerifierError::EpsOutOfRange(eps));
    }
    let np1 = (n + 1) as f64;
    let cubic = 4.0 * np1.powi(3);
    let tail = -32.0 * np1 * eps.ln();
    let x = cubic.max(tail);
    // absorb ulp-level error in ln so exact integers stay exact
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    Ok(k as u64)
}

pub const BRUTE_FORCE_MAX_NODES: usize = 16;

pub type EdgeSet = BTreeSet<(usize, usize)>;

/// All inclusion-maximal matchings, as sets of `(min, max)` node pairs.
pub fn brute_force_maximal_matchings(g: &AnonymousGraph) -> Result<BTreeSet<EdgeSet>, VerifierError> {
    let n = g.node_count();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(VerifierError::TooLarge {
            n,
            cap: BRUTE_FORCE_MAX_NODES,
        });
    }
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.u.min(e.v), e.u.max(e.v))).collect();
    let mut out = BTreeSet::new();
    let mut chosen = Vec::new();
    let mut used = vec![false; n];
    fn rec(
        i: usize,
        edges: &[(usize, usize)],
        used: &mut Vec<bool>,
        chosen: &mut Vec<(usize, usize)>,
        out: &mut BTreeSet<EdgeSet>,
    ) {
        if i == edges.len() {
            if edges.iter().all(|&(u, v)| used[u] || used[v]) {
                out.insert(chosen.iter().copied().collect());
            }
            return;
        }
        let (u, v) = edges[i];
        if !used[u] && !used[v] {
            used[u] = true;
            used[v] = true;
            chosen.push((u, v));
            rec(i + 1, edges, used, chosen, out);
            chosen.pop();
            used[u] = false;
            used[v] = false;
        }
        rec(i + 1, edges, used, chosen, out);
    }
    rec(0, &edges, &mut used, &mut chosen, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate, EdgeSpec, Family};
    use proptest::prelude::*;

    fn set(pairs: &[(usize, usize)]) -> EdgeSet {
        pairs.iter().copied().collect()
    }

    fn to(g: &AnonymousGraph, u: usize, v: usize) -> Option<u64> {
        g.port_label(u, u, v).map(u64::from)
    }

    #[test]
    fn check_m_examples() {
        let k2 = AnonymousGraph::build(2, &[EdgeSpec::new(0, 1)]).unwrap();
        assert!(check_m(&k2, &MatchingConfiguration { beta: vec![Some(1), Some(1)] }).passed());

        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        let r = check_m(&p3, &MatchingConfiguration::all_null(3));
        assert!(r.m1.passed() && r.m2.passed());
        assert!(matches!(r.m3, Clause::Fail(Witness::Edge(_, _))));

        let k3 = generate(Family::Complete { n: 3 }, 0).unwrap();
        let c = MatchingConfiguration {
            beta: vec![to(&k3, 0, 1), to(&k3, 1, 0), None],
        };
        assert!(check_m(&k3, &c).passed());
        let brute = brute_force_maximal_matchings(&k3).unwrap();
        assert!(brute.contains(&set(&matched_pairs(&k3, &c))));
    }

    #[test]
    fn check_pairs_reports_each_clause() {
        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        assert_eq!(check_pairs(&p3, &[(0, 2)]).m1, Clause::Fail(Witness::Edge(0, 2)));
        assert_eq!(check_pairs(&p3, &[(0, 1), (1, 2)]).m2, Clause::Fail(Witness::Node(1)));
        assert!(check_pairs(&p3, &[(1, 2)]).passed());
    }

    #[test]
    fn check_ln_examples() {
        let k2 = AnonymousGraph::build(2, &[EdgeSpec::new(0, 1)]).unwrap();
        let good = RegisterFile::canonical(&k2);
        assert!(check_ln(&k2, &good).passed());

        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        let mut dup = RegisterFile::canonical(&p3);
        dup.link[1] = vec![1, 1];
        assert_eq!(check_ln(&p3, &dup).ln1, Clause::Fail(Witness::Node(1)));

        let mut stale = RegisterFile::canonical(&k2);
        stale.img[0][0] = 3;
        let r = check_ln(&k2, &stale);
        assert!(r.ln1.passed());
        assert_eq!(r.ln2, Clause::Fail(Witness::Edge(0, 1)));
    }

    #[test]
    fn potential_examples() {
        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        assert_eq!(potential(&p3, &MatchingConfiguration::all_null(3)), Potential::default());
        let c = MatchingConfiguration {
            beta: vec![to(&p3, 0, 1), None, to(&p3, 2, 1)],
        };
        assert_eq!(potential(&p3, &c), Potential { good: 0, almost_good: 2 });
        assert!(lex_le(Potential::from((0, 3)), Potential::from((1, 0))));
        assert!(!lex_le(Potential::from((1, 0)), Potential::from((0, 3))));
        assert_eq!(serde_json::to_string(&Potential::from((2, 5))).unwrap(), "[2,5]");
    }

    #[test]
    fn classes() {
        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        let c = MatchingConfiguration {
            beta: vec![to(&p3, 0, 1), None, None],
        };
        assert_eq!(classify(&p3, &c, 2), NodeClass::Single);
        assert_eq!(classify(&p3, &c, 1), NodeClass::Indecisive);
        assert_eq!(classify(&p3, &c, 0), NodeClass::PointingOut);
        let c = MatchingConfiguration {
            beta: vec![to(&p3, 0, 1), to(&p3, 1, 0), None],
        };
        assert_eq!(classify(&p3, &c, 0), NodeClass::InGoodEdge);
        assert_eq!(classify(&p3, &c, 1), NodeClass::InGoodEdge);
    }

    #[test]
    fn k_bound_values() {
        // reference values from 50-digit arithmetic
        assert_eq!(k_bound(5, 1.0), Ok(4 * 216));
        assert_eq!(k_bound(6, 1.0 / 6.0), Ok(1372));
        assert_eq!(k_bound(2, (-27.0f64).exp()), Ok(2592));
        assert_eq!(k_bound(10, 0.1), Ok(5324));
        assert_eq!(k_bound(3, 0.001), Ok(885));
        assert_eq!(k_bound(1, 1e-300), Ok(44210));
        assert!(k_bound(3, 0.0).is_err());
        assert!(k_bound(3, 1.5).is_err());
        assert!(k_bound(0, 0.5).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let k2 = AnonymousGraph::build(2, &[EdgeSpec::new(0, 1)]).unwrap();
        assert_eq!(brute_force_maximal_matchings(&k2).unwrap(), [set(&[(0, 1)])].into());
        let p3 = generate(Family::Path { n: 3 }, 0).unwrap();
        assert_eq!(
            brute_force_maximal_matchings(&p3).unwrap(),
            [set(&[(0, 1)]), set(&[(1, 2)])].into()
        );
        let c4 = generate(Family::Ring { n: 4 }, 0).unwrap();
        assert_eq!(
            brute_force_maximal_matchings(&c4).unwrap(),
            [set(&[(0, 1), (2, 3)]), set(&[(1, 2), (0, 3)])].into()
        );
        let big = generate(Family::Path { n: 17 }, 0).unwrap();
        assert!(brute_force_maximal_matchings(&big).is_err());
    }

    proptest! {
        #[test]
        fn lex_le_is_a_total_order(a: (u8, u8), b: (u8, u8), c: (u8, u8)) {
            let p = |x: (u8, u8)| Potential::from((x.0 as usize, x.1 as usize));
            let (a, b, c) = (p(a), p(b), p(c));
            prop_assert!(lex_le(a, a));
            prop_assert!(lex_le(a, b) || lex_le(b, a));
            if lex_le(a, b) && lex_le(b, a) { prop_assert_eq!(a, b); }
            if lex_le(a, b) && lex_le(b, c) { prop_assert!(lex_le(a, c)); }
            prop_assert_eq!(lex_le(a, b), a <= b);
        }

        #[test]
        fn k_bound_is_monotone(n in 1usize..200, e1 in 1e-12f64..1.0, e2 in 1e-12f64..1.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(k_bound(n, lo).unwrap() >= k_bound(n, hi).unwrap());
            prop_assert!(k_bound(n + 1, lo).unwrap() >= k_bound(n, lo).unwrap());
        }

        #[test]
        fn classes_partition_and_potential_is_bounded(
            n in 2usize..10, p in 0.2f64..1.0, seed: u64,
            raw in proptest::collection::vec(proptest::option::of(0u64..6), 10),
        ) {
            let g = generate(Family::RandomConnected { n, p }, seed).unwrap();
            let c = MatchingConfiguration { beta: raw[..n].to_vec() };
            let classes: Vec<NodeClass> = (0..n).map(|u| classify(&g, &c, u)).collect();
            let in_good = classes.iter().filter(|k| **k == NodeClass::InGoodEdge).count();
            let f = potential(&g, &c);
            prop_assert_eq!(in_good, 2 * f.good);
            prop_assert!(f.good <= n / 2);
            prop_assert!(f.almost_good <= n - 1);
        }

        /// The clause checker agrees with membership in the brute-force set.
        #[test]
        fn check_m_matches_brute_force(
            n in 2usize..9, p in 0.2f64..1.0, seed: u64,
            raw in proptest::collection::vec(proptest::option::of(0u64..6), 9),
        ) {
            let g = generate(Family::RandomConnected { n, p }, seed).unwrap();
            let c = MatchingConfiguration { beta: raw[..n].to_vec() };
            let pairs = set(&matched_pairs(&g, &c));
            let maximal = brute_force_maximal_matchings(&g).unwrap();
            prop_assert_eq!(check_m(&g, &c).passed(), maximal.contains(&pairs));
        }
    }
}
