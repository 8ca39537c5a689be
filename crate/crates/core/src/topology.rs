//! Anonymous graphs with port numbering.
//!
//! Node indices exist only for the simulator's bookkeeping. Algorithm code
//! navigates through port labels: [`AnonymousGraph::proc`] yields an opaque
//! [`NodeHandle`] and [`AnonymousGraph::port_mirror`] yields the port by which
//! the neighbor sees the link back.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Port identifier. Always positive; `0` is never a valid port.
pub type Port = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({u},{v}) has an endpoint outside 0..{n}")]
    NodeOutOfRange { u: usize, v: usize, n: usize },
    #[error("self-loop at node {node}")]
    SelfLoop { node: usize },
    #[error("parallel edge ({u},{v})")]
    ParallelEdge { u: usize, v: usize },
    #[error("port clash at node {node}: port {port} used twice (edge ({u},{v}))")]
    PortClash {
        node: usize,
        port: Port,
        u: usize,
        v: usize,
    },
    #[error("port 0 is not a valid port (edge ({u},{v}))")]
    ZeroPort { u: usize, v: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsatisfiable generator parameters: {0}")]
    Unsatisfiable(String),
}

/// One edge of an input edge list. Ports are either both given or both
/// auto-assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub u: usize,
    pub v: usize,
    pub ports: Option<(Port, Port)>,
}

impl EdgeSpec {
    pub fn new(u: usize, v: usize) -> Self {
        EdgeSpec { u, v, ports: None }
    }

    pub fn with_ports(u: usize, v: usize, pu: Port, pv: Port) -> Self {
        EdgeSpec {
            u,
            v,
            ports: Some((pu, pv)),
        }
    }
}

/// A fully labelled edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub port_u: Port,
    pub port_v: Port,
}

/// One incident link as seen from its owner, sorted by `port` in the
/// adjacency lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub port: Port,
    pub neighbor: usize,
    /// Port of this link at `neighbor`.
    pub mirror: Port,
    /// Position of this link in the neighbor's sorted adjacency list.
    pub mirror_index: usize,
    pub edge: usize,
}

/// Opaque reference to the process on the far side of a link.
///
/// Deliberately not comparable: two handles cannot be tested for equality, so
/// rule code cannot recover identities from them. The simulator reads the
/// index through [`NodeHandle::bookkeeping_index`].
#[derive(Debug, Clone, Copy)]
pub struct NodeHandle(usize);

impl NodeHandle {
    /// Simulator-side index. Not for use in rule guards.
    pub fn bookkeeping_index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymousGraph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<Link>>,
}

impl AnonymousGraph {
    /// Builds a graph from an edge list. Missing port labels are assigned per
    /// node as the smallest unused positive label, in edge-input order, so a
    /// list without explicit labels yields ports `1..=degree(u)`.
    pub fn build(n: usize, specs: &[EdgeSpec]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut used: Vec<BTreeSet<Port>> = vec![BTreeSet::new(); n];
        for s in specs {
            if s.u >= n || s.v >= n {
                return Err(GraphError::NodeOutOfRange { u: s.u, v: s.v, n });
            }
            if s.u == s.v {
                return Err(GraphError::SelfLoop { node: s.u });
            }
            let key = (s.u.min(s.v), s.u.max(s.v));
            if !seen.insert(key) {
                return Err(GraphError::ParallelEdge { u: key.0, v: key.1 });
            }
            if let Some((pu, pv)) = s.ports {
                if pu == 0 || pv == 0 {
                    return Err(GraphError::ZeroPort { u: s.u, v: s.v });
                }
                for (node, port) in [(s.u, pu), (s.v, pv)] {
                    if !used[node].insert(port) {
                        return Err(GraphError::PortClash {
                            node,
                            port,
                            u: s.u,
                            v: s.v,
                        });
                    }
                }
            }
        }
        let mut next_free = vec![1 as Port; n];
        let mut take = |node: usize, used: &mut Vec<BTreeSet<Port>>| {
            let mut p = next_free[node];
            while used[node].contains(&p) {
                p += 1;
            }
            used[node].insert(p);
            next_free[node] = p + 1;
            p
        };
        let mut edges = Vec::with_capacity(specs.len());
        for s in specs {
            let (port_u, port_v) = match s.ports {
                Some(p) => p,
                None => {
                    let pu = take(s.u, &mut used);
                    let pv = take(s.v, &mut used);
                    (pu, pv)
                }
            };
            edges.push(Edge {
                u: s.u,
                v: s.v,
                port_u,
                port_v,
            });
        }
        Ok(Self::from_labelled(n, edges))
    }

    fn from_labelled(n: usize, edges: Vec<Edge>) -> Self {
        let mut adj: Vec<Vec<Link>> = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            adj[e.u].push(Link {
                port: e.port_u,
                neighbor: e.v,
                mirror: e.port_v,
                mirror_index: 0,
                edge: i,
            });
            adj[e.v].push(Link {
                port: e.port_v,
                neighbor: e.u,
                mirror: e.port_u,
                mirror_index: 0,
                edge: i,
            });
        }
        for links in &mut adj {
            links.sort_by_key(|l| l.port);
        }
        let positions: HashMap<(usize, Port), usize> = adj
            .iter()
            .enumerate()
            .flat_map(|(u, ls)| ls.iter().enumerate().map(move |(i, l)| ((u, l.port), i)))
            .collect();
        for links in adj.iter_mut() {
            for l in links.iter_mut() {
                l.mirror_index = positions[&(l.neighbor, l.mirror)];
            }
        }
        AnonymousGraph { n, edges, adj }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Incident links of `u` in ascending port order.
    pub fn links(&self, u: usize) -> &[Link] {
        &self.adj[u]
    }

    /// The port set of `u`, ascending.
    pub fn ports_of(&self, u: usize) -> Vec<Port> {
        self.adj[u].iter().map(|l| l.port).collect()
    }

    /// Position of `port` in `u`'s sorted adjacency, if `port` is one of `u`'s.
    pub fn port_index(&self, u: usize, port: Port) -> Option<usize> {
        self.adj[u].binary_search_by_key(&port, |l| l.port).ok()
    }

    pub fn link(&self, u: usize, port: Port) -> Option<&Link> {
        self.port_index(u, port).map(|i| &self.adj[u][i])
    }

    /// The process reached from `u` through port `a`, or `None` (ndef).
    pub fn proc(&self, u: usize, a: Port) -> Option<NodeHandle> {
        self.link(u, a).map(|l| NodeHandle(l.neighbor))
    }

    /// The port through which `proc(u, a)` reaches `u`, or `None` (ndef).
    pub fn port_mirror(&self, u: usize, a: Port) -> Option<Port> {
        self.link(u, a).map(|l| l.mirror)
    }

    /// `p(u, e)` for the edge `{x, y}`; `None` when `u` is not an endpoint or
    /// the edge does not exist.
    pub fn port_label(&self, u: usize, x: usize, y: usize) -> Option<Port> {
        let other = if u == x {
            y
        } else if u == y {
            x
        } else {
            return None;
        };
        self.adj
            .get(u)?
            .iter()
            .find(|l| l.neighbor == other)
            .map(|l| l.port)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adj[u].iter().any(|l| l.neighbor == v)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for l in &self.adj[u] {
                if !seen[l.neighbor] {
                    seen[l.neighbor] = true;
                    stack.push(l.neighbor);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Fully labelled edge list, suitable for serialization and rebuilding.
    pub fn edge_specs(&self) -> Vec<EdgeSpec> {
        self.edges
            .iter()
            .map(|e| EdgeSpec::with_ports(e.u, e.v, e.port_u, e.port_v))
            .collect()
    }

    /// Parses the text graph format: a `n m` header, then `m` lines of
    /// `u v` or `u v pu pv`. Lines starting with `#` and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(GraphError::Parse {
            line: 0,
            msg: "missing `n m` header".into(),
        })?;
        let nums = parse_numbers(hline, header)?;
        if nums.len() != 2 {
            return Err(GraphError::Parse {
                line: hline,
                msg: "header must be `n m`".into(),
            });
        }
        let (n, m) = (nums[0] as usize, nums[1] as usize);
        let mut specs = Vec::with_capacity(m);
        for (line, l) in lines {
            let nums = parse_numbers(line, l)?;
            let spec = match nums.as_slice() {
                [u, v] => EdgeSpec::new(*u as usize, *v as usize),
                [u, v, pu, pv] => {
                    let port = |x: u64| {
                        Port::try_from(x).map_err(|_| GraphError::Parse {
                            line,
                            msg: format!("port {x} out of range"),
                        })
                    };
                    EdgeSpec::with_ports(*u as usize, *v as usize, port(*pu)?, port(*pv)?)
                }
                _ => {
                    return Err(GraphError::Parse {
                        line,
                        msg: "edge line must be `u v` or `u v pu pv`".into(),
                    })
                }
            };
            specs.push(spec);
        }
        if specs.len() != m {
            return Err(GraphError::Parse {
                line: 1,
                msg: format!("header announces {m} edges, found {}", specs.len()),
            });
        }
        Self::build(n, &specs)
    }

    /// Renders the graph in the text format, always with explicit ports.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.edges.len());
        for e in &self.edges {
            out.push_str(&format!("{} {} {} {}\n", e.u, e.v, e.port_u, e.port_v));
        }
        out
    }
}

fn parse_numbers(line: usize, text: &str) -> Result<Vec<u64>, GraphError> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<u64>().map_err(|_| GraphError::Parse {
                line,
                msg: format!("not a nonnegative integer: {t:?}"),
            })
        })
        .collect()
}

/// Graph generator families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Path { n: usize },
    Ring { n: usize },
    /// `n` nodes in total: node 0 is the center.
    Star { n: usize },
    Complete { n: usize },
    RandomConnected { n: usize, p: f64 },
}

impl Family {
    pub fn node_count(&self) -> usize {
        match *self {
            Family::Path { n }
            | Family::Ring { n }
            | Family::Star { n }
            | Family::Complete { n }
            | Family::RandomConnected { n, .. } => n,
        }
    }

    /// The same family with `n` nodes.
    pub fn with_node_count(self, n: usize) -> Family {
        match self {
            Family::Path { .. } => Family::Path { n },
            Family::Ring { .. } => Family::Ring { n },
            Family::Star { .. } => Family::Star { n },
            Family::Complete { .. } => Family::Complete { n },
            Family::RandomConnected { p, .. } => Family::RandomConnected { n, p },
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Family::Path { n } => write!(f, "path,{n}"),
            Family::Ring { n } => write!(f, "ring,{n}"),
            Family::Star { n } => write!(f, "star,{n}"),
            Family::Complete { n } => write!(f, "complete,{n}"),
            Family::RandomConnected { n, p } => write!(f, "random_connected,{n},{p}"),
        }
    }
}

impl FromStr for Family {
    type Err = GraphError;

    /// Accepts `FAMILY,N[,P]`, with optional `n=`/`p=` prefixes on the values.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: String| GraphError::Parse { line: 0, msg };
        let mut parts = s.split(',').map(str::trim);
        let family = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts
            .map(|p| p.split_once('=').map_or(p, |(_, v)| v))
            .collect();
        let n = values
            .first()
            .ok_or_else(|| bad(format!("{s:?}: missing node count")))?
            .parse::<usize>()
            .map_err(|_| bad(format!("{s:?}: bad node count")))?;
        let fam = match family {
            "path" => Family::Path { n },
            "ring" | "cycle" => Family::Ring { n },
            "star" => Family::Star { n },
            "complete" => Family::Complete { n },
            "random_connected" | "random" => {
                let p = values
                    .get(1)
                    .ok_or_else(|| bad(format!("{s:?}: missing edge probability")))?
                    .parse::<f64>()
                    .map_err(|_| bad(format!("{s:?}: bad edge probability")))?;
                Family::RandomConnected { n, p }
            }
            other => return Err(bad(format!("unknown graph family {other:?}"))),
        };
        Ok(fam)
    }
}

/// Deterministic graph generation; `seed` only matters for random families.
pub fn generate(family: Family, seed: u64) -> Result<AnonymousGraph, GraphError> {
    let n = family.node_count();
    if n == 0 {
        return Err(GraphError::Unsatisfiable("n must be at least 1".into()));
    }
    let specs: Vec<EdgeSpec> = match family {
        Family::Path { n } => (1..n).map(|i| EdgeSpec::new(i - 1, i)).collect(),
        Family::Ring { n } => {
            if n < 3 {
                return Err(GraphError::Unsatisfiable(format!(
                    "a ring needs at least 3 nodes, got {n}"
                )));
            }
            (0..n).map(|i| EdgeSpec::new(i, (i + 1) % n)).collect()
        }
        Family::Star { n } => (1..n).map(|i| EdgeSpec::new(0, i)).collect(),
        Family::Complete { n } => (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| EdgeSpec::new(u, v)))
            .collect(),
        Family::RandomConnected { n, p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GraphError::Unsatisfiable(format!(
                    "edge probability must be in (0,1], got {p}"
                )));
            }
            random_connected(n, p, seed)
        }
    };
    AnonymousGraph::build(n, &specs)
}

/// G(n, p) followed by random bridging edges between components until the
/// graph is connected. Edge order is shuffled so default port labels do not
/// follow node indices.
fn random_connected(n: usize, p: f64, seed: u64) -> Vec<EdgeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while comp[r] != r {
            r = comp[r];
        }
        let mut y = x;
        while comp[y] != r {
            let next = comp[y];
            comp[y] = r;
            y = next;
        }
        r
    }
    for &(u, v) in &edges {
        let (ru, rv) = (find(&mut comp, u), find(&mut comp, v));
        comp[ru] = rv;
    }
    let mut roots: Vec<usize> = (0..n).filter(|&x| find(&mut comp, x) == x).collect();
    roots.shuffle(&mut rng);
    let members = |comp: &mut Vec<usize>, r: usize| -> Vec<usize> {
        (0..n).filter(|&x| find(comp, x) == r).collect()
    };
    for w in 1..roots.len() {
        // attach component `w` to a uniformly chosen earlier one
        let target = roots[rng.gen_range(0..w)];
        let a = members(&mut comp, roots[w]);
        let b = members(&mut comp, target);
        let x = a[rng.gen_range(0..a.len())];
        let y = b[rng.gen_range(0..b.len())];
        edges.push((x.min(y), x.max(y)));
    }
    edges.shuffle(&mut rng);
    edges
        .into_iter()
        .map(|(u, v)| {
            if rng.gen_bool(0.5) {
                EdgeSpec::new(u, v)
            } else {
                EdgeSpec::new(v, u)
            }
        })
        .collect()
}
