//! Link naming under the link-register model with read/write atomicity.
//!
//! Every node owns a `link` and an `img` register per port. `link(u,a)` is the
//! name `u` gives to port `a`; `img(u,a)` is `u`'s copy of the name its
//! neighbor gives to the same link. Each node runs a step machine whose atomic
//! actions perform exactly one register access, so a rule spans several
//! daemon-scheduled moves:
//!
//! * R0 (rename): read each own `link`, then write `1..=degree` in ascending
//!   port order wherever the value differs.
//! * Ra (mirror port `a`): read `img(u,a)`, read the neighbor's link, and if
//!   they differ re-read the neighbor's link and write it into `img(u,a)`.
//!
//! An idle node is activable when some guard holds on the current registers.
//! It starts R0 first, otherwise the next Ra with a true guard in cyclic port
//! order after the last one it ran.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::daemon::{Enabled, EnabledMap, Selection};
use crate::engine::{check_selection, Change, DrawSource, EngineError, Layer, System};
use crate::topology::{AnonymousGraph, Port};
use crate::verifier::Potential;

/// `link` and `img` registers, indexed by node then by position in the node's
/// ascending port list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterFile {
    pub link: Vec<Vec<u64>>,
    pub img: Vec<Vec<u64>>,
}

impl RegisterFile {
    pub fn zeroed(g: &AnonymousGraph) -> Self {
        let shape: Vec<Vec<u64>> = (0..g.node_count()).map(|u| vec![0; g.degree(u)]).collect();
        RegisterFile {
            link: shape.clone(),
            img: shape,
        }
    }

    /// Registers satisfying the naming specification: links `1..=degree` in
    /// port order and mirrored images.
    pub fn canonical(g: &AnonymousGraph) -> Self {
        let link: Vec<Vec<u64>> = (0..g.node_count())
            .map(|u| (1..=g.degree(u) as u64).collect())
            .collect();
        let img = (0..g.node_count())
            .map(|u| {
                g.links(u)
                    .iter()
                    .map(|l| link[l.neighbor][l.mirror_index])
                    .collect()
            })
            .collect();
        RegisterFile { link, img }
    }

    pub fn fits(&self, g: &AnonymousGraph) -> bool {
        self.link.len() == g.node_count()
            && self.img.len() == g.node_count()
            && (0..g.node_count()).all(|u| self.link[u].len() == g.degree(u) && self.img[u].len() == g.degree(u))
    }

    /// Writes `link(owner, idx)`, enforcing that only the owner writes.
    pub fn write_link(&mut self, writer: usize, owner: usize, idx: usize, value: u64) -> Result<u64, EngineError> {
        if writer != owner {
            return Err(EngineError::OwnershipViolation { writer, owner });
        }
        Ok(std::mem::replace(&mut self.link[owner][idx], value))
    }

    pub fn write_img(&mut self, writer: usize, owner: usize, idx: usize, value: u64) -> Result<u64, EngineError> {
        if writer != owner {
            return Err(EngineError::OwnershipViolation { writer, owner });
        }
        Ok(std::mem::replace(&mut self.img[owner][idx], value))
    }
}

/// True when the link values are not exactly `{1, …, len}`.
pub fn guard_r0_holds(links: &[u64]) -> bool {
    let mut sorted = links.to_vec();
    sorted.sort_unstable();
    !sorted.iter().enumerate().all(|(i, &v)| v == i as u64 + 1)
}

/// Guard of Ra for the port at position `idx` of `u`.
pub fn guard_ra_holds(g: &AnonymousGraph, regs: &RegisterFile, u: usize, idx: usize) -> bool {
    let l = &g.links(u)[idx];
    regs.img[u][idx] != regs.link[l.neighbor][l.mirror_index]
}

/// No guard holds anywhere.
pub fn is_stable_a2(g: &AnonymousGraph, regs: &RegisterFile) -> bool {
    (0..g.node_count())
        .all(|u| !guard_r0_holds(&regs.link[u]) && (0..g.degree(u)).all(|i| !guard_ra_holds(g, regs, u, i)))
}

/// Program counter of one node's step machine. Indices are positions in the
/// node's port list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    /// R0 reading own links; `scratch` holds the values read so far.
    RenameRead { scratch: Vec<u64> },
    /// R0 writing; positions still to rename, ascending.
    RenameWrite { pending: Vec<usize> },
    /// Ra read `img` (value `own`), next reads the neighbor's link.
    MirrorCompare { idx: usize, own: u64 },
    MirrorReread { idx: usize },
    MirrorWrite { idx: usize, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeMachine {
    pub phase: Phase,
    /// Where the cyclic scan for the next Ra starts.
    pub cursor: usize,
}

impl Default for NodeMachine {
    fn default() -> Self {
        NodeMachine {
            phase: Phase::Idle,
            cursor: 0,
        }
    }
}

/// One register access. Ports are the acting node's own ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkAction {
    RenameReadLink(Port),
    RenameWriteLink(Port),
    MirrorReadImg(Port),
    MirrorReadNeighbor(Port),
    MirrorRereadNeighbor(Port),
    MirrorWriteImg(Port),
}

impl LinkAction {
    fn parts(self) -> (&'static str, Port) {
        match self {
            LinkAction::RenameReadLink(p) => ("r0_read_link", p),
            LinkAction::RenameWriteLink(p) => ("r0_write_link", p),
            LinkAction::MirrorReadImg(p) => ("ra_read_img", p),
            LinkAction::MirrorReadNeighbor(p) => ("ra_read_neighbor", p),
            LinkAction::MirrorRereadNeighbor(p) => ("ra_reread_neighbor", p),
            LinkAction::MirrorWriteImg(p) => ("ra_write_img", p),
        }
    }

    pub fn is_rename(self) -> bool {
        matches!(self, LinkAction::RenameReadLink(_) | LinkAction::RenameWriteLink(_))
    }
}

impl fmt::Display for LinkAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, port) = self.parts();
        write!(f, "{name}@{port}")
    }
}

impl FromStr for LinkAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, port) = s.split_once('@').ok_or_else(|| format!("bad link action {s:?}"))?;
        let p: Port = port.parse().map_err(|_| format!("bad port in {s:?}"))?;
        Ok(match name {
            "r0_read_link" => LinkAction::RenameReadLink(p),
            "r0_write_link" => LinkAction::RenameWriteLink(p),
            "ra_read_img" => LinkAction::MirrorReadImg(p),
            "ra_read_neighbor" => LinkAction::MirrorReadNeighbor(p),
            "ra_reread_neighbor" => LinkAction::MirrorRereadNeighbor(p),
            "ra_write_img" => LinkAction::MirrorWriteImg(p),
            _ => return Err(format!("bad link action {s:?}")),
        })
    }
}

/// The next atomic action of `u`, or `None` when `u` is not activable.
pub fn next_action(g: &AnonymousGraph, regs: &RegisterFile, u: usize, m: &NodeMachine) -> Option<LinkAction> {
    let port = |i: usize| g.links(u)[i].port;
    match &m.phase {
        Phase::Idle => {
            let deg = g.degree(u);
            if guard_r0_holds(&regs.link[u]) {
                return Some(LinkAction::RenameReadLink(port(0)));
            }
            (0..deg)
                .map(|k| (m.cursor + k) % deg)
                .find(|&i| guard_ra_holds(g, regs, u, i))
                .map(|i| LinkAction::MirrorReadImg(port(i)))
        }
        Phase::RenameRead { scratch } => Some(LinkAction::RenameReadLink(port(scratch.len()))),
        Phase::RenameWrite { pending } => Some(LinkAction::RenameWriteLink(port(pending[0]))),
        Phase::MirrorCompare { idx, .. } => Some(LinkAction::MirrorReadNeighbor(port(*idx))),
        Phase::MirrorReread { idx } => Some(LinkAction::MirrorRereadNeighbor(port(*idx))),
        Phase::MirrorWrite { idx, .. } => Some(LinkAction::MirrorWriteImg(port(*idx))),
    }
}

/// Performs `u`'s next action on the live registers.
pub fn perform(
    g: &AnonymousGraph,
    regs: &mut RegisterFile,
    u: usize,
    m: &mut NodeMachine,
) -> Result<(LinkAction, Option<Change>), EngineError> {
    let action = next_action(g, regs, u, m).ok_or(EngineError::NotEnabled {
        node: u,
        action: "any link action".into(),
    })?;
    Ok((action, perform_scheduled(g, regs, u, m, action)?))
}

/// Performs `action`, chosen when `u` was scheduled. An idle node starts the
/// scheduled rule even if an earlier write in the same transition has since
/// falsified its guard; the rule then ends without writing.
pub fn perform_scheduled(
    g: &AnonymousGraph,
    regs: &mut RegisterFile,
    u: usize,
    m: &mut NodeMachine,
    action: LinkAction,
) -> Result<Option<Change>, EngineError> {
    let links = g.links(u);
    let deg = links.len();
    let mut change = None;
    let phase = std::mem::replace(&mut m.phase, Phase::Idle);
    m.phase = match (phase, action) {
        (Phase::Idle, LinkAction::RenameReadLink(_)) => read_own_link(regs, u, deg, Vec::new()),
        (Phase::RenameRead { scratch }, _) => read_own_link(regs, u, deg, scratch),
        (Phase::RenameWrite { mut pending }, _) => {
            let idx = pending.remove(0);
            let new = idx as u64 + 1;
            let old = regs.write_link(u, u, idx, new)?;
            change = Some(Change::Link {
                node: u,
                port: links[idx].port,
                old,
                new,
            });
            if pending.is_empty() {
                Phase::Idle
            } else {
                Phase::RenameWrite { pending }
            }
        }
        (Phase::Idle, LinkAction::MirrorReadImg(p)) => {
            let idx = g.port_index(u, p).expect("action names an own port");
            Phase::MirrorCompare {
                idx,
                own: regs.img[u][idx],
            }
        }
        (Phase::MirrorCompare { idx, own }, _) => {
            let l = &links[idx];
            if regs.link[l.neighbor][l.mirror_index] == own {
                m.cursor = (idx + 1) % deg;
                Phase::Idle
            } else {
                Phase::MirrorReread { idx }
            }
        }
        (Phase::MirrorReread { idx }, _) => {
            let l = &links[idx];
            Phase::MirrorWrite {
                idx,
                value: regs.link[l.neighbor][l.mirror_index],
            }
        }
        (Phase::MirrorWrite { idx, value }, _) => {
            let old = regs.write_img(u, u, idx, value)?;
            change = Some(Change::Img {
                node: u,
                port: links[idx].port,
                old,
                new: value,
            });
            m.cursor = (idx + 1) % deg;
            Phase::Idle
        }
        (Phase::Idle, other) => unreachable!("idle machine cannot start with {other}"),
    };
    Ok(change)
}

fn read_own_link(regs: &RegisterFile, u: usize, deg: usize, mut scratch: Vec<u64>) -> Phase {
    scratch.push(regs.link[u][scratch.len()]);
    if scratch.len() < deg {
        return Phase::RenameRead { scratch };
    }
    if !guard_r0_holds(&scratch) {
        return Phase::Idle;
    }
    let pending: Vec<usize> = (0..deg).filter(|&i| scratch[i] != i as u64 + 1).collect();
    Phase::RenameWrite { pending }
}

pub struct LinkNameSystem<'g> {
    graph: &'g AnonymousGraph,
    regs: RegisterFile,
    machines: Vec<NodeMachine>,
}

impl<'g> LinkNameSystem<'g> {
    pub fn new(graph: &'g AnonymousGraph, regs: RegisterFile) -> Self {
        assert!(regs.fits(graph), "register file does not match the graph");
        LinkNameSystem {
            graph,
            regs,
            machines: vec![NodeMachine::default(); graph.node_count()],
        }
    }

    pub fn with_machines(graph: &'g AnonymousGraph, regs: RegisterFile, machines: Vec<NodeMachine>) -> Self {
        assert!(regs.fits(graph) && machines.len() == graph.node_count());
        LinkNameSystem { graph, regs, machines }
    }

    pub fn registers(&self) -> &RegisterFile {
        &self.regs
    }

    pub fn machines(&self) -> &[NodeMachine] {
        &self.machines
    }

    pub fn into_parts(self) -> (RegisterFile, Vec<NodeMachine>) {
        (self.regs, self.machines)
    }

    /// All machines idle and no guard holds.
    pub fn is_silent(&self) -> bool {
        self.machines.iter().all(|m| m.phase == Phase::Idle) && is_stable_a2(self.graph, &self.regs)
    }
}

impl System for LinkNameSystem<'_> {
    type Action = LinkAction;

    fn layer(&self) -> Layer {
        Layer::A2
    }

    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Rename work weighs 1 for the greedy adversary, which therefore lets
    /// neighbors copy stale names before a rename lands.
    fn enabled(&self) -> EnabledMap<LinkAction> {
        EnabledMap::new(
            (0..self.graph.node_count())
                .filter_map(|u| {
                    next_action(self.graph, &self.regs, u, &self.machines[u]).map(|a| Enabled {
                        node: u,
                        actions: vec![a],
                        weight: u32::from(a.is_rename()),
                    })
                })
                .collect(),
        )
    }

    /// Selected nodes act one after another in ascending node order.
    fn apply(&mut self, selection: &Selection<LinkAction>, _draws: &mut dyn DrawSource) -> Result<Vec<Change>, EngineError> {
        check_selection(self.graph.node_count(), selection)?;
        for (u, action) in selection {
            if next_action(self.graph, &self.regs, *u, &self.machines[*u]) != Some(*action) {
                return Err(EngineError::NotEnabled {
                    node: *u,
                    action: action.to_string(),
                });
            }
        }
        let mut changes = Vec::new();
        for (u, action) in selection {
            let change = perform_scheduled(self.graph, &mut self.regs, *u, &mut self.machines[*u], *action)?;
            changes.extend(change);
        }
        Ok(changes)
    }

    fn potential(&self) -> Option<Potential> {
        None
    }

    fn action_kind(action: &LinkAction) -> &'static str {
        if action.is_rename() {
            "r0"
        } else {
            "ra"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daemon::{Daemon, PolicyKind};
    use crate::engine::{drive, ScriptedDraws};
    use crate::rng::{stream, Stream};
    use crate::topology::{generate, EdgeSpec, Family};
    use crate::verifier::check_ln;
    use proptest::prelude::*;
    use rand::Rng;

    fn k2() -> AnonymousGraph {
        AnonymousGraph::build(2, &[EdgeSpec::new(0, 1)]).unwrap()
    }

    /// Runs `u` alone until its machine is idle again, returning the actions.
    fn solo(g: &AnonymousGraph, regs: &mut RegisterFile, u: usize) -> Vec<LinkAction> {
        let mut m = NodeMachine::default();
        let mut out = Vec::new();
        loop {
            let (a, _) = perform(g, regs, u, &mut m).unwrap();
            out.push(a);
            if m.phase == Phase::Idle {
                return out;
            }
        }
    }

    #[test]
    fn r0_guard() {
        assert!(!guard_r0_holds(&[1, 2, 3]));
        assert!(!guard_r0_holds(&[3, 1, 2]));
        assert!(guard_r0_holds(&[1, 1, 2]));
        assert!(guard_r0_holds(&[1, 5]));
        assert!(!guard_r0_holds(&[]));
    }

    #[test]
    fn rename_is_canonical_and_costs_at_most_two_per_port() {
        let g = generate(Family::Path { n: 3 }, 0).unwrap();
        let mut regs = RegisterFile::zeroed(&g);
        regs.link[1] = vec![7, 7];
        let acts = solo(&g, &mut regs, 1);
        assert_eq!(regs.link[1], vec![1, 2]);
        assert!(acts.len() <= 4);
        assert!(acts.iter().all(|a| a.is_rename()));

        // degree 1 with link 1: no rename
        let mut regs = RegisterFile::canonical(&g);
        let m = NodeMachine::default();
        assert_eq!(next_action(&g, &regs, 0, &m), None);
        regs.link[0] = vec![1];
        assert_eq!(next_action(&g, &regs, 0, &m), None);
    }

    #[test]
    fn mirror_rule_examples() {
        let g = k2();
        let mut regs = RegisterFile { link: vec![vec![1], vec![2]], img: vec![vec![0], vec![1]] };
        let acts = solo(&g, &mut regs, 0);
        assert_eq!(regs.img[0], vec![2]);
        assert_eq!(acts.len(), 4);
        assert_eq!(acts[3], LinkAction::MirrorWriteImg(1));

        let regs = RegisterFile { link: vec![vec![1], vec![2]], img: vec![vec![2], vec![1]] };
        assert_eq!(next_action(&g, &regs, 0, &NodeMachine::default()), None);

        // neighbor renames between the two reads: the execution stops after
        // two reads
        let mut regs = RegisterFile { link: vec![vec![1], vec![2]], img: vec![vec![5], vec![1]] };
        let mut m = NodeMachine::default();
        perform(&g, &mut regs, 0, &mut m).unwrap();
        regs.link[1][0] = 5;
        perform(&g, &mut regs, 0, &mut m).unwrap();
        assert_eq!(m.phase, Phase::Idle);
    }

    #[test]
    fn stability_examples() {
        let g = k2();
        let regs = RegisterFile { link: vec![vec![1], vec![1]], img: vec![vec![1], vec![1]] };
        assert!(is_stable_a2(&g, &regs));
        let regs = RegisterFile { link: vec![vec![1], vec![1]], img: vec![vec![3], vec![1]] };
        assert!(!is_stable_a2(&g, &regs));
    }

    #[test]
    fn foreign_writes_are_rejected() {
        let g = k2();
        let mut regs = RegisterFile::zeroed(&g);
        assert_eq!(
            regs.write_link(0, 1, 0, 3),
            Err(EngineError::OwnershipViolation { writer: 0, owner: 1 })
        );
        assert_eq!(
            regs.write_img(1, 0, 0, 3),
            Err(EngineError::OwnershipViolation { writer: 1, owner: 0 })
        );
    }

    #[test]
    fn action_strings_round_trip() {
        for a in [
            LinkAction::RenameReadLink(3),
            LinkAction::RenameWriteLink(1),
            LinkAction::MirrorReadImg(2),
            LinkAction::MirrorReadNeighbor(9),
            LinkAction::MirrorRereadNeighbor(4),
            LinkAction::MirrorWriteImg(5),
        ] {
            assert_eq!(a.to_string().parse::<LinkAction>(), Ok(a));
        }
        assert!("nope@1".parse::<LinkAction>().is_err());
    }

    proptest! {
        #[test]
        fn silent_within_twenty_m_and_names_are_consistent(
            n in 2usize..14, p in 0.1f64..1.0, seed: u64, k in 0usize..4, garbage in 1u64..20,
        ) {
            let g = generate(Family::RandomConnected { n, p }, seed).unwrap();
            let mut rng = stream(seed, Stream::Faults);
            let mut regs = RegisterFile::zeroed(&g);
            for u in 0..n {
                for i in 0..g.degree(u) {
                    regs.link[u][i] = rng.gen_range(0..=garbage);
                    regs.img[u][i] = rng.gen_range(0..=garbage);
                }
            }
            let mut sys = LinkNameSystem::new(&g, regs);
            let mut daemon = Daemon::new(PolicyKind::LIVE[k], stream(seed, Stream::Daemon));
            let mut events = Vec::new();
            let report = drive(&mut sys, &mut daemon, &mut ScriptedDraws::new([]), u64::MAX, &mut events).unwrap();
            prop_assert!(report.converged);
            prop_assert!(report.moves <= 20 * g.edge_count() as u64);
            prop_assert!(sys.is_silent());
            prop_assert!(check_ln(&g, sys.registers()).passed());
        }
    }
}
