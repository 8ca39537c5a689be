//! Matching over link names, composed with the link-naming layer.
//!
//! The rewritten matching rules store a link name in `beta` instead of a port
//! and test "my neighbor across `a` points at me" as `beta(proc(u,a)) ==
//! img(u,a)`. They read the naming registers and never write them; the naming
//! layer never touches `beta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::daemon::{Daemon, Enabled, EnabledMap, Selection};
use crate::engine::{check_selection, drive, Change, DrawSource, EngineError, Layer, RunReport, System};
use crate::linkname::{next_action, perform_scheduled, LinkAction, LinkNameSystem, NodeMachine, Phase, RegisterFile};
use crate::matching::{step_with, LocalView, MatchingConfiguration, NeighborStatus, Rule};
use crate::topology::{AnonymousGraph, Port};
use crate::trace::TraceEvent;
use crate::verifier::{potential, Potential};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedState {
    pub registers: RegisterFile,
    pub machines: Vec<NodeMachine>,
    /// Raw link names; see [`interpret_name`].
    pub beta: MatchingConfiguration,
}

impl ComposedState {
    pub fn new(g: &AnonymousGraph, registers: RegisterFile, beta: MatchingConfiguration) -> Self {
        ComposedState {
            registers,
            machines: vec![NodeMachine::default(); g.node_count()],
            beta,
        }
    }
}

/// `u`'s stored name read as a port: it must equal `link(u,a)` for exactly one
/// port `a`, otherwise it reads as null.
pub fn interpret_name(g: &AnonymousGraph, regs: &RegisterFile, u: usize, raw: Option<u64>) -> Option<Port> {
    let x = raw?;
    let mut hits = regs.link[u].iter().enumerate().filter(|(_, &l)| l == x);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Some(g.links(u)[i].port),
        _ => None,
    }
}

pub fn local_view_ra1(g: &AnonymousGraph, regs: &RegisterFile, beta: &MatchingConfiguration, u: usize) -> LocalView {
    LocalView {
        own: interpret_name(g, regs, u, beta.beta[u]),
        neighbors: g
            .links(u)
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let v = l.neighbor;
                let status = if beta.beta[v] == Some(regs.img[u][i]) {
                    NeighborStatus::PointsAtMe
                } else if interpret_name(g, regs, v, beta.beta[v]).is_none() {
                    NeighborStatus::Null
                } else {
                    NeighborStatus::Elsewhere
                };
                (l.port, status)
            })
            .collect(),
    }
}

pub fn enabled_rule_ra1(g: &AnonymousGraph, regs: &RegisterFile, beta: &MatchingConfiguration, u: usize) -> Option<Rule> {
    local_view_ra1(g, regs, beta, u).enabled_rule()
}

/// New raw `beta(u)`: the chosen port's link name, or null.
pub fn apply_rule_ra1(
    g: &AnonymousGraph,
    regs: &RegisterFile,
    beta: &MatchingConfiguration,
    u: usize,
    rule: Rule,
    draws: &mut dyn DrawSource,
) -> Result<Option<u64>, EngineError> {
    let port = local_view_ra1(g, regs, beta, u)
        .apply(rule, draws)
        .map_err(|e| match e {
            EngineError::NotEnabled { action, .. } => EngineError::NotEnabled { node: u, action },
            other => other,
        })?;
    Ok(port.map(|p| name_of(g, regs, u, p)))
}

fn name_of(g: &AnonymousGraph, regs: &RegisterFile, u: usize, p: Port) -> u64 {
    regs.link[u][g.port_index(u, p).expect("own port")]
}

/// Translates stored names into ports through `regs`, giving a configuration
/// the port-based matching code understands. Unreadable names become null.
pub fn names_to_ports(g: &AnonymousGraph, regs: &RegisterFile, beta: &MatchingConfiguration) -> MatchingConfiguration {
    MatchingConfiguration::from_ports(
        &(0..g.node_count())
            .map(|u| interpret_name(g, regs, u, beta.beta[u]))
            .collect::<Vec<_>>(),
    )
}

/// The rewritten matching rules over fixed registers.
pub struct Ra1System<'g> {
    graph: &'g AnonymousGraph,
    regs: RegisterFile,
    beta: MatchingConfiguration,
}

impl<'g> Ra1System<'g> {
    pub fn new(graph: &'g AnonymousGraph, regs: RegisterFile, beta: MatchingConfiguration) -> Self {
        Ra1System { graph, regs, beta }
    }

    pub fn beta(&self) -> &MatchingConfiguration {
        &self.beta
    }

    pub fn into_parts(self) -> (RegisterFile, MatchingConfiguration) {
        (self.regs, self.beta)
    }
}

impl System for Ra1System<'_> {
    type Action = Rule;

    fn layer(&self) -> Layer {
        Layer::RA1
    }

    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn enabled(&self) -> EnabledMap<Rule> {
        let (g, regs, beta) = (self.graph, &self.regs, &self.beta);
        crate::matching::enabled_map_from((0..g.node_count()).map(|u| (u, local_view_ra1(g, regs, beta, u))))
    }

    fn apply(&mut self, selection: &Selection<Rule>, draws: &mut dyn DrawSource) -> Result<Vec<Change>, EngineError> {
        let g = self.graph;
        let regs = &self.regs;
        let before = self.beta.clone();
        step_with(
            &mut self.beta.beta,
            selection,
            draws,
            |u| local_view_ra1(g, regs, &before, u),
            |u, p| name_of(g, regs, u, p),
        )
    }

    fn potential(&self) -> Option<Potential> {
        Some(potential(self.graph, &names_to_ports(self.graph, &self.regs, &self.beta)))
    }

    fn action_kind(action: &Rule) -> &'static str {
        action.name()
    }
}

/// Action of the interleaved composition. Naming actions order first, so a
/// node with both layers enabled runs its naming action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComposedAction {
    Link(LinkAction),
    Match(Rule),
}

impl fmt::Display for ComposedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComposedAction::Link(a) => a.fmt(f),
            ComposedAction::Match(r) => r.fmt(f),
        }
    }
}

impl FromStr for ComposedAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('@') {
            s.parse().map(ComposedAction::Link)
        } else {
            s.parse().map(ComposedAction::Match)
        }
    }
}

/// Both layers scheduled together. Matching guards read the live registers.
/// Exploration only: no convergence guarantee is claimed for this mode.
pub struct InterleavedSystem<'g> {
    graph: &'g AnonymousGraph,
    state: ComposedState,
}

impl<'g> InterleavedSystem<'g> {
    pub fn new(graph: &'g AnonymousGraph, state: ComposedState) -> Self {
        InterleavedSystem { graph, state }
    }

    pub fn state(&self) -> &ComposedState {
        &self.state
    }

    pub fn into_state(self) -> ComposedState {
        self.state
    }
}

impl System for InterleavedSystem<'_> {
    type Action = ComposedAction;

    fn layer(&self) -> Layer {
        Layer::Mixed
    }

    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn enabled(&self) -> EnabledMap<ComposedAction> {
        let g = self.graph;
        let s = &self.state;
        EnabledMap::new(
            (0..g.node_count())
                .map(|u| {
                    let view = local_view_ra1(g, &s.registers, &s.beta, u);
                    let mut actions = Vec::new();
                    actions.extend(next_action(g, &s.registers, u, &s.machines[u]).map(ComposedAction::Link));
                    actions.extend(view.enabled_rule().map(ComposedAction::Match));
                    Enabled {
                        node: u,
                        actions,
                        weight: u32::from(view.own.is_none()),
                    }
                })
                .collect(),
        )
    }

    /// Matching moves read the pre-transition state; naming moves then run in
    /// ascending node order.
    fn apply(&mut self, selection: &Selection<ComposedAction>, draws: &mut dyn DrawSource) -> Result<Vec<Change>, EngineError> {
        let g = self.graph;
        check_selection(g.node_count(), selection)?;
        let matches: Selection<Rule> = selection
            .iter()
            .filter_map(|(u, a)| match a {
                ComposedAction::Match(r) => Some((*u, *r)),
                ComposedAction::Link(_) => None,
            })
            .collect();
        for (u, a) in selection {
            if let ComposedAction::Link(la) = a {
                if next_action(g, &self.state.registers, *u, &self.state.machines[*u]) != Some(*la) {
                    return Err(EngineError::NotEnabled { node: *u, action: la.to_string() });
                }
            }
        }
        let regs_before = self.state.registers.clone();
        let beta_before = self.state.beta.clone();
        let mut changes = step_with(
            &mut self.state.beta.beta,
            &matches,
            draws,
            |u| local_view_ra1(g, &regs_before, &beta_before, u),
            |u, p| name_of(g, &regs_before, u, p),
        )?;
        for (u, a) in selection {
            if let ComposedAction::Link(la) = a {
                let change = perform_scheduled(g, &mut self.state.registers, *u, &mut self.state.machines[*u], *la)?;
                changes.extend(change);
            }
        }
        Ok(changes)
    }

    fn potential(&self) -> Option<Potential> {
        let s = &self.state;
        Some(potential(self.graph, &names_to_ports(self.graph, &s.registers, &s.beta)))
    }

    fn action_kind(action: &ComposedAction) -> &'static str {
        match action {
            ComposedAction::Link(a) if a.is_rename() => "r0",
            ComposedAction::Link(_) => "ra",
            ComposedAction::Match(r) => r.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComposedCaps {
    pub naming_moves: u64,
    pub matching_moves: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedOutcome {
    pub naming: RunReport,
    pub matching: RunReport,
    pub state: ComposedState,
}

/// Phased composition: the naming layer runs to silence, then the matching
/// layer runs over the frozen registers.
pub fn run_composed(
    g: &AnonymousGraph,
    initial: ComposedState,
    naming_daemon: &mut Daemon<LinkAction>,
    matching_daemon: &mut Daemon<Rule>,
    draws: &mut dyn DrawSource,
    caps: ComposedCaps,
    events: &mut Vec<TraceEvent>,
) -> Result<ComposedOutcome, EngineError> {
    let ComposedState {
        registers,
        machines,
        beta,
    } = initial;
    let mut naming = LinkNameSystem::with_machines(g, registers, machines);
    let naming_report = drive(&mut naming, naming_daemon, draws, caps.naming_moves, events)?;
    let (registers, machines) = naming.into_parts();
    if !naming_report.converged {
        return Ok(ComposedOutcome {
            naming: naming_report,
            matching: RunReport::default(),
            state: ComposedState {
                registers,
                machines,
                beta,
            },
        });
    }
    debug_assert!(machines.iter().all(|m| m.phase == Phase::Idle));
    let mut upper = Ra1System::new(g, registers, beta);
    let matching_report = drive(&mut upper, matching_daemon, draws, caps.matching_moves, events)?;
    let (registers, beta) = upper.into_parts();
    Ok(ComposedOutcome {
        naming: naming_report,
        matching: matching_report,
        state: ComposedState {
            registers,
            machines,
            beta,
        },
    })
}
