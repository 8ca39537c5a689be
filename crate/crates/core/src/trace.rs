//! Line-delimited JSON execution traces.
//!
//! The first line is a header (graph, algorithm, seed, initial state); each
//! following line is one transition with its selections, random draws,
//! variable writes and the potential afterwards.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daemon::PolicyKind;
use crate::engine::{Change, Draw, Layer};
use crate::linkname::RegisterFile;
use crate::matching::MatchingConfiguration;
use crate::topology::{AnonymousGraph, EdgeSpec, GraphError};
use crate::verifier::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    A1,
    A2,
    Composed,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::A1 => "a1",
            Algorithm::A2 => "a2",
            Algorithm::Composed => "composed",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "a1" => Algorithm::A1,
            "a2" => Algorithm::A2,
            "composed" => Algorithm::Composed,
            other => return Err(format!("unknown algorithm {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selected {
    pub node: usize,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub layer: Layer,
    pub selections: Vec<Selected>,
    pub draws: Vec<Draw>,
    pub changes: Vec<Change>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub potential: Option<Potential>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<MatchingConfiguration>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub registers: Option<RegisterFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub interleaved: bool,
    pub seed: u64,
    pub policy: PolicyKind,
    pub faults: String,
    pub n: usize,
    pub edges: Vec<EdgeSpec>,
    pub initial: InitialState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Step(TraceEvent),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Json { line: usize, msg: String },
    #[error("trace has no header line")]
    MissingHeader,
    #[error("header line appears again at line {0}")]
    DuplicateHeader(usize),
    #[error("trace graph is invalid: {0}")]
    Graph(#[from] GraphError),
    #[error("step {step}: {msg}")]
    Malformed { step: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn graph(&self) -> Result<AnonymousGraph, TraceError> {
        Ok(AnonymousGraph::build(self.header.n, &self.header.edges)?)
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let line = serde_json::to_string(&Record::Header(self.header.clone()))?;
        writeln!(out, "{line}")?;
        for ev in &self.events {
            // events are cloned into the record enum one at a time
            let line = serde_json::to_string(&Record::Step(ev.clone()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, TraceError> {
        let mut header = None;
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| TraceError::Json {
                line: i + 1,
                msg: e.to_string(),
            })?;
            match rec {
                Record::Header(h) if header.is_none() => header = Some(h),
                Record::Header(_) => return Err(TraceError::DuplicateHeader(i + 1)),
                Record::Step(ev) => events.push(ev),
            }
        }
        Ok(Trace {
            header: header.ok_or(TraceError::MissingHeader)?,
            events,
        })
    }

    /// Total moves: one per selected action.
    pub fn moves(&self) -> u64 {
        self.events.iter().map(|e| e.selections.len() as u64).sum()
    }
}

/// Configuration rebuilt from a trace's initial state and recorded writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceState {
    pub beta: Option<MatchingConfiguration>,
    pub registers: Option<RegisterFile>,
}

/// A recorded write whose `old` value disagrees with the rebuilt state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaleWrite {
    pub change: Change,
    pub actual: String,
}

impl TraceState {
    pub fn initial(trace: &Trace, g: &AnonymousGraph) -> Result<Self, TraceError> {
        let init = &trace.header.initial;
        if let Some(b) = &init.beta {
            if b.beta.len() != g.node_count() {
                return Err(TraceError::Malformed {
                    step: 0,
                    msg: "initial beta has the wrong length".into(),
                });
            }
        }
        if let Some(r) = &init.registers {
            if !r.fits(g) {
                return Err(TraceError::Malformed {
                    step: 0,
                    msg: "initial registers do not match the graph".into(),
                });
            }
        }
        Ok(TraceState {
            beta: init.beta.clone(),
            registers: init.registers.clone(),
        })
    }

    /// Applies the writes of `ev`, forcing the recorded new values. Writes
    /// whose old value disagrees are reported back.
    pub fn apply(&mut self, g: &AnonymousGraph, ev: &TraceEvent) -> Result<Vec<StaleWrite>, TraceError> {
        let bad = |msg: String| TraceError::Malformed { step: ev.step, msg };
        let mut stale = Vec::new();
        for ch in &ev.changes {
            match ch {
                Change::Beta { node, old, new } => {
                    let beta = self.beta.as_mut().ok_or_else(|| bad("beta write without beta state".into()))?;
                    let slot = beta.beta.get_mut(*node).ok_or_else(|| bad(format!("node {node} out of range")))?;
                    if slot != old {
                        stale.push(StaleWrite {
                            change: ch.clone(),
                            actual: format!("{slot:?}"),
                        });
                    }
                    *slot = *new;
                }
                Change::Link { node, port, old, new } | Change::Img { node, port, old, new } => {
                    let regs = self
                        .registers
                        .as_mut()
                        .ok_or_else(|| bad("register write without register state".into()))?;
                    if *node >= g.node_count() {
                        return Err(bad(format!("node {node} out of range")));
                    }
                    let idx = g
                        .port_index(*node, *port)
                        .ok_or_else(|| bad(format!("node {node} has no port {port}")))?;
                    let slot = match ch {
                        Change::Link { .. } => &mut regs.link[*node][idx],
                        _ => &mut regs.img[*node][idx],
                    };
                    if slot != old {
                        stale.push(StaleWrite {
                            change: ch.clone(),
                            actual: slot.to_string(),
                        });
                    }
                    *slot = *new;
                }
            }
        }
        Ok(stale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace {
            header: TraceHeader {
                algorithm: Algorithm::A1,
                interleaved: false,
                seed: 3,
                policy: PolicyKind::Synchronous,
                faults: "all-null".into(),
                n: 2,
                edges: vec![EdgeSpec::with_ports(0, 1, 1, 1)],
                initial: InitialState {
                    beta: Some(MatchingConfiguration::all_null(2)),
                    registers: None,
                },
            },
            events: vec![TraceEvent {
                step: 0,
                layer: Layer::A1,
                selections: vec![Selected { node: 0, action: "seduction".into() }],
                draws: vec![Draw::Coin(true), Draw::Pick { of: 1, index: 0 }],
                changes: vec![Change::Beta { node: 0, old: None, new: Some(1) }],
                potential: Some(Potential { good: 0, almost_good: 1 }),
            }],
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(Trace::read_jsonl(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn rejects_headerless_and_garbled_input() {
        let t = sample();
        let body: String = t.to_jsonl().lines().skip(1).collect();
        assert!(matches!(Trace::read_jsonl(body.as_bytes()), Err(TraceError::MissingHeader)));
        assert!(matches!(Trace::read_jsonl("{nope".as_bytes()), Err(TraceError::Json { line: 1, .. })));
    }

    #[test]
    fn state_rebuild_flags_stale_writes() {
        let t = sample();
        let g = t.graph().unwrap();
        let mut s = TraceState::initial(&t, &g).unwrap();
        assert!(s.apply(&g, &t.events[0]).unwrap().is_empty());
        assert_eq!(s.beta.as_ref().unwrap().beta, vec![Some(1), None]);
        // replaying the same write again: old value no longer matches
        assert_eq!(s.apply(&g, &t.events[0]).unwrap().len(), 1);
    }
}
