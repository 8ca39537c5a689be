//! Randomized maximal matching under the state model with guarded-rule
//! atomicity.
//!
//! Each node stores one pointer `beta`: null or a port. Rule guards only see a
//! [`LocalView`], i.e. their own interpreted pointer and, per port, whether the
//! neighbor across it is null, points back, or points elsewhere. The view is
//! what keeps rule code free of node identities; the composed engine builds
//! the same view from link-name registers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::daemon::{Enabled, EnabledMap, Selection};
use crate::engine::{check_selection, Change, DrawSource, EngineError, Layer, System};
use crate::topology::{AnonymousGraph, Port};
use crate::verifier::{potential, Potential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Marriage,
    Abandonment,
    Seduction,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Marriage, Rule::Abandonment, Rule::Seduction];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Marriage => "marriage",
            Rule::Abandonment => "abandonment",
            Rule::Seduction => "seduction",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown rule {s:?}"))
    }
}

/// What a node can tell about the neighbor across one of its ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborStatus {
    Null,
    PointsAtMe,
    Elsewhere,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalView {
    pub own: Option<Port>,
    /// Ascending by port.
    pub neighbors: Vec<(Port, NeighborStatus)>,
}

impl LocalView {
    fn status(&self, port: Port) -> Option<NeighborStatus> {
        self.neighbors
            .iter()
            .find(|(p, _)| *p == port)
            .map(|(_, s)| *s)
    }

    fn any(&self, s: NeighborStatus) -> bool {
        self.neighbors.iter().any(|(_, t)| *t == s)
    }

    /// The guards are mutually exclusive, so at most one rule is enabled.
    pub fn enabled_rule(&self) -> Option<Rule> {
        match self.own {
            None if self.any(NeighborStatus::PointsAtMe) => Some(Rule::Marriage),
            None if self.any(NeighborStatus::Null) => Some(Rule::Seduction),
            None => None,
            Some(p) if self.status(p) == Some(NeighborStatus::Elsewhere) => Some(Rule::Abandonment),
            Some(_) => None,
        }
    }

    fn null_ports(&self) -> Vec<Port> {
        self.neighbors
            .iter()
            .filter(|(_, s)| *s == NeighborStatus::Null)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Executes `rule`'s command and returns the new interpreted pointer.
    pub fn apply(&self, rule: Rule, draws: &mut dyn DrawSource) -> Result<Option<Port>, EngineError> {
        if self.enabled_rule() != Some(rule) {
            return Err(EngineError::NotEnabled {
                node: usize::MAX,
                action: rule.to_string(),
            });
        }
        Ok(match rule {
            // lowest port among the neighbors pointing here
            Rule::Marriage => self
                .neighbors
                .iter()
                .find(|(_, s)| *s == NeighborStatus::PointsAtMe)
                .map(|(p, _)| *p),
            Rule::Abandonment => None,
            Rule::Seduction => {
                if draws.coin()? {
                    let free = self.null_ports();
                    Some(free[draws.pick(free.len())?])
                } else {
                    None
                }
            }
        })
    }

    /// Every pointer value the command can produce, for exhaustive exploration.
    pub fn outcomes(&self, rule: Rule) -> Vec<Option<Port>> {
        match rule {
            Rule::Marriage => vec![self
                .neighbors
                .iter()
                .find(|(_, s)| *s == NeighborStatus::PointsAtMe)
                .map(|(p, _)| *p)],
            Rule::Abandonment => vec![None],
            Rule::Seduction => std::iter::once(None)
                .chain(self.null_ports().into_iter().map(Some))
                .collect(),
        }
    }
}

/// Per-node raw pointer storage. Raw values that do not name one of the
/// node's ports read as null.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchingConfiguration {
    pub beta: Vec<Option<u64>>,
}

impl MatchingConfiguration {
    pub fn all_null(n: usize) -> Self {
        MatchingConfiguration { beta: vec![None; n] }
    }

    /// Builds a configuration from interpreted pointers.
    pub fn from_ports(ports: &[Option<Port>]) -> Self {
        MatchingConfiguration {
            beta: ports.iter().map(|p| p.map(u64::from)).collect(),
        }
    }
}

pub fn interpret_beta(g: &AnonymousGraph, u: usize, raw: Option<u64>) -> Option<Port> {
    let port = Port::try_from(raw?).ok()?;
    g.port_index(u, port).map(|_| port)
}

/// Interpreted pointer of `u` in `c`.
pub fn pointer(g: &AnonymousGraph, c: &MatchingConfiguration, u: usize) -> Option<Port> {
    interpret_beta(g, u, c.beta[u])
}

pub fn local_view(g: &AnonymousGraph, c: &MatchingConfiguration, u: usize) -> LocalView {
    LocalView {
        own: pointer(g, c, u),
        neighbors: g
            .links(u)
            .iter()
            .map(|l| {
                let status = match pointer(g, c, l.neighbor) {
                    None => NeighborStatus::Null,
                    Some(p) if p == l.mirror => NeighborStatus::PointsAtMe,
                    Some(_) => NeighborStatus::Elsewhere,
                };
                (l.port, status)
            })
            .collect(),
    }
}

pub fn enabled_rule(g: &AnonymousGraph, c: &MatchingConfiguration, u: usize) -> Option<Rule> {
    local_view(g, c, u).enabled_rule()
}

/// New raw value of `beta(u)` after executing `rule`.
pub fn apply_rule(
    g: &AnonymousGraph,
    c: &MatchingConfiguration,
    u: usize,
    rule: Rule,
    draws: &mut dyn DrawSource,
) -> Result<Option<u64>, EngineError> {
    local_view(g, c, u)
        .apply(rule, draws)
        .map(|p| p.map(u64::from))
        .map_err(|e| with_node(e, u))
}

fn with_node(e: EngineError, u: usize) -> EngineError {
    match e {
        EngineError::NotEnabled { action, .. } => EngineError::NotEnabled { node: u, action },
        other => other,
    }
}

/// Applies a selection with guarded-rule atomicity: every selected node reads
/// the pre-transition configuration, then all writes land at once.
/// `view` builds node views on the current configuration and `store` turns a
/// chosen port into the raw value to write.
pub(crate) fn step_with(
    beta: &mut [Option<u64>],
    selection: &Selection<Rule>,
    draws: &mut dyn DrawSource,
    view: impl Fn(usize) -> LocalView,
    store: impl Fn(usize, Port) -> u64,
) -> Result<Vec<Change>, EngineError> {
    check_selection(beta.len(), selection)?;
    let views: Vec<LocalView> = selection.iter().map(|(u, _)| view(*u)).collect();
    for ((u, rule), v) in selection.iter().zip(&views) {
        if v.enabled_rule() != Some(*rule) {
            return Err(EngineError::NotEnabled {
                node: *u,
                action: rule.to_string(),
            });
        }
    }
    let mut writes = Vec::with_capacity(selection.len());
    for ((u, rule), v) in selection.iter().zip(&views) {
        let new = v.apply(*rule, draws)?.map(|p| store(*u, p));
        writes.push((*u, new));
    }
    Ok(writes
        .into_iter()
        .map(|(u, new)| {
            let old = std::mem::replace(&mut beta[u], new);
            Change::Beta { node: u, old, new }
        })
        .collect())
}

/// One transition of the matching algorithm.
pub fn step(
    g: &AnonymousGraph,
    c: &MatchingConfiguration,
    selection: &Selection<Rule>,
    draws: &mut dyn DrawSource,
) -> Result<(MatchingConfiguration, Vec<Change>), EngineError> {
    let mut next = c.clone();
    let changes = step_with(
        &mut next.beta,
        selection,
        draws,
        |u| local_view(g, c, u),
        |_, p| u64::from(p),
    )?;
    Ok((next, changes))
}

pub fn is_stable(g: &AnonymousGraph, c: &MatchingConfiguration) -> bool {
    (0..g.node_count()).all(|u| enabled_rule(g, c, u).is_none())
}

/// Enabled rules with adversary weights: a null-pointer node (Single or
/// Indecisive) is a progress node and weighs 1.
pub(crate) fn enabled_map_from(views: impl Iterator<Item = (usize, LocalView)>) -> EnabledMap<Rule> {
    EnabledMap::new(
        views
            .filter_map(|(u, v)| {
                v.enabled_rule().map(|r| Enabled {
                    node: u,
                    actions: vec![r],
                    weight: u32::from(v.own.is_none()),
                })
            })
            .collect(),
    )
}

pub struct MatchingSystem<'g> {
    graph: &'g AnonymousGraph,
    config: MatchingConfiguration,
}

impl<'g> MatchingSystem<'g> {
    pub fn new(graph: &'g AnonymousGraph, config: MatchingConfiguration) -> Self {
        assert_eq!(config.beta.len(), graph.node_count());
        MatchingSystem { graph, config }
    }

    pub fn config(&self) -> &MatchingConfiguration {
        &self.config
    }

    pub fn into_config(self) -> MatchingConfiguration {
        self.config
    }
}

impl System for MatchingSystem<'_> {
    type Action = Rule;

    fn layer(&self) -> Layer {
        Layer::A1
    }

    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn enabled(&self) -> EnabledMap<Rule> {
        let g = self.graph;
        enabled_map_from((0..g.node_count()).map(|u| (u, local_view(g, &self.config, u))))
    }

    fn apply(&mut self, selection: &Selection<Rule>, draws: &mut dyn DrawSource) -> Result<Vec<Change>, EngineError> {
        let (next, changes) = step(self.graph, &self.config, selection, draws)?;
        self.config = next;
        Ok(changes)
    }

    fn potential(&self) -> Option<Potential> {
        Some(potential(self.graph, &self.config))
    }

    fn action_kind(action: &Rule) -> &'static str {
        action.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Draw, ScriptedDraws};
    use crate::topology::{generate, EdgeSpec, Family};
    use proptest::prelude::*;

    fn k2() -> AnonymousGraph {
        AnonymousGraph::build(2, &[EdgeSpec::new(0, 1)]).unwrap()
    }

    fn path3() -> AnonymousGraph {
        generate(Family::Path { n: 3 }, 0).unwrap()
    }

    /// Port of `u` leading to `v`.
    fn to(g: &AnonymousGraph, u: usize, v: usize) -> Option<u64> {
        g.port_label(u, u, v).map(u64::from)
    }

    #[test]
    fn interpret_beta_reads_foreign_values_as_null() {
        let g = AnonymousGraph::build(3, &[EdgeSpec::new(0, 1), EdgeSpec::new(0, 2)]).unwrap();
        assert_eq!(interpret_beta(&g, 0, Some(2)), Some(2));
        assert_eq!(interpret_beta(&g, 0, Some(9)), None);
        assert_eq!(interpret_beta(&g, 0, None), None);
        assert_eq!(interpret_beta(&g, 0, Some(u64::MAX)), None);
    }

    #[test]
    fn guard_examples() {
        let g = k2();
        let c = MatchingConfiguration { beta: vec![None, to(&g, 1, 0)] };
        assert_eq!(enabled_rule(&g, &c, 0), Some(Rule::Marriage));

        let g = path3();
        let c = MatchingConfiguration {
            beta: vec![to(&g, 0, 1), to(&g, 1, 2), to(&g, 2, 1)],
        };
        assert_eq!(enabled_rule(&g, &c, 0), Some(Rule::Abandonment));
        assert_eq!(enabled_rule(&g, &c, 1), None);
        assert_eq!(enabled_rule(&g, &c, 2), None);

        let g = k2();
        let c = MatchingConfiguration::all_null(2);
        assert_eq!(enabled_rule(&g, &c, 0), Some(Rule::Seduction));
        assert_eq!(enabled_rule(&g, &c, 1), Some(Rule::Seduction));
    }

    #[test]
    fn marriage_takes_lowest_pointing_port() {
        // node 0 has ports 1,2,3 to nodes 1,2,3; nodes 2 and 3 point at 0
        let g = generate(Family::Star { n: 4 }, 0).unwrap();
        let c = MatchingConfiguration { beta: vec![None, None, Some(1), Some(1)] };
        let mut d = ScriptedDraws::new([]);
        assert_eq!(apply_rule(&g, &c, 0, Rule::Marriage, &mut d), Ok(Some(2)));
    }

    #[test]
    fn abandonment_yields_null_and_disabled_rule_is_rejected() {
        let g = path3();
        let c = MatchingConfiguration {
            beta: vec![to(&g, 0, 1), to(&g, 1, 2), to(&g, 2, 1)],
        };
        let mut d = ScriptedDraws::new([]);
        assert_eq!(apply_rule(&g, &c, 0, Rule::Abandonment, &mut d), Ok(None));
        assert_eq!(
            apply_rule(&g, &c, 1, Rule::Seduction, &mut d),
            Err(EngineError::NotEnabled { node: 1, action: "seduction".into() })
        );
    }

    #[test]
    fn k2_seduction_outcome_table() {
        // both seduce; a heads coin makes the node point at its only neighbor
        let g = k2();
        let c = MatchingConfiguration::all_null(2);
        let sel = vec![(0, Rule::Seduction), (1, Rule::Seduction)];
        let draw = |h: bool| {
            if h {
                vec![Draw::Coin(true), Draw::Pick { of: 1, index: 0 }]
            } else {
                vec![Draw::Coin(false)]
            }
        };
        let table = [
            (true, true, Potential { good: 1, almost_good: 0 }),
            (true, false, Potential { good: 0, almost_good: 1 }),
            (false, true, Potential { good: 0, almost_good: 1 }),
            (false, false, Potential { good: 0, almost_good: 0 }),
        ];
        for (a, b, expected) in table {
            let mut d = ScriptedDraws::new(draw(a).into_iter().chain(draw(b)));
            let (next, changes) = step(&g, &c, &sel, &mut d).unwrap();
            assert_eq!(potential(&g, &next), expected, "coins {a} {b}");
            assert_eq!(changes.len(), 2);
            assert_eq!(d.remaining(), 0);
        }
    }

    #[test]
    fn step_frame_condition_and_overlap() {
        let g = generate(Family::Path { n: 4 }, 0).unwrap();
        let c = MatchingConfiguration { beta: vec![None, Some(77), None, Some(1)] };
        let mut d = ScriptedDraws::new([Draw::Coin(true), Draw::Pick { of: 1, index: 0 }]);
        let (next, _) = step(&g, &c, &vec![(0, Rule::Seduction)], &mut d).unwrap();
        assert_eq!(next.beta[1..], c.beta[1..]);
        assert_eq!(next.beta[0], Some(1));
        let mut d = ScriptedDraws::new([]);
        assert_eq!(
            step(&g, &c, &vec![(0, Rule::Seduction), (0, Rule::Seduction)], &mut d),
            Err(EngineError::DuplicateSelection { node: 0 })
        );
    }

    #[test]
    fn indecisive_marriage_trades_almost_good_edges_for_one_good_edge() {
        // star center 0 is Indecisive with three almost good edges
        let g = generate(Family::Star { n: 4 }, 0).unwrap();
        let c = MatchingConfiguration { beta: vec![None, Some(1), Some(1), Some(1)] };
        assert_eq!(potential(&g, &c), Potential { good: 0, almost_good: 3 });
        let mut d = ScriptedDraws::new([]);
        let (next, _) = step(&g, &c, &vec![(0, Rule::Marriage)], &mut d).unwrap();
        assert_eq!(potential(&g, &next), Potential { good: 1, almost_good: 0 });
    }

    #[test]
    fn stability_examples() {
        let g = k2();
        assert!(is_stable(&g, &MatchingConfiguration { beta: vec![Some(1), Some(1)] }));
        assert!(!is_stable(&g, &MatchingConfiguration::all_null(2)));
        let g = path3();
        assert!(!is_stable(&g, &MatchingConfiguration::all_null(3)));
    }

    /// Node-pointer formulation of the three guards, evaluated with identities
    /// available. Independent of the port-based view.
    fn oracle_rule(g: &AnonymousGraph, ptr: &[Option<usize>], u: usize) -> Option<Rule> {
        let nbrs: Vec<usize> = g.links(u).iter().map(|l| l.neighbor).collect();
        let someone_points = nbrs.iter().any(|&v| ptr[v] == Some(u));
        let some_null = nbrs.iter().any(|&v| ptr[v].is_none());
        let marriage = ptr[u].is_none() && someone_points;
        let abandonment = nbrs
            .iter()
            .any(|&v| ptr[u] == Some(v) && ptr[v] != Some(u) && ptr[v].is_some());
        let seduction = ptr[u].is_none() && !someone_points && some_null;
        assert!(u8::from(marriage) + u8::from(abandonment) + u8::from(seduction) <= 1);
        if marriage {
            Some(Rule::Marriage)
        } else if abandonment {
            Some(Rule::Abandonment)
        } else if seduction {
            Some(Rule::Seduction)
        } else {
            None
        }
    }

    proptest! {
        #[test]
        fn port_view_agrees_with_node_pointer_guards(
            n in 2usize..10, p in 0.2f64..1.0, seed: u64,
            raw in proptest::collection::vec(proptest::option::of(0u64..8), 10),
        ) {
            let g = generate(Family::RandomConnected { n, p }, seed).unwrap();
            let c = MatchingConfiguration { beta: raw[..n].to_vec() };
            let ptr: Vec<Option<usize>> = (0..n)
                .map(|u| pointer(&g, &c, u).map(|a| g.link(u, a).unwrap().neighbor))
                .collect();
            for u in 0..n {
                prop_assert_eq!(enabled_rule(&g, &c, u), oracle_rule(&g, &ptr, u));
            }
        }
    }
}
