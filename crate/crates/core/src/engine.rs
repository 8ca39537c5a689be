//! Machinery shared by the three engines: random draw sources, recorded
//! variable changes, and the daemon-driven run loop.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daemon::{Daemon, DaemonError, EnabledMap, Selection};
use crate::topology::Port;
use crate::trace::{Selected, TraceEvent};
use crate::verifier::Potential;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("node {node}: {action} is not enabled")]
    NotEnabled { node: usize, action: String },
    #[error("node {node} selected more than once in one transition")]
    DuplicateSelection { node: usize },
    #[error("node {node} is out of range")]
    UnknownNode { node: usize },
    #[error("node {writer} attempted to write a register owned by node {owner}")]
    OwnershipViolation { writer: usize, owner: usize },
    #[error("recorded draws exhausted")]
    DrawsExhausted,
    #[error("recorded draw {recorded:?} does not fit the requested draw {requested}")]
    DrawMismatch { recorded: Draw, requested: String },
    #[error(transparent)]
    Daemon(#[from] DaemonError),
}

/// One random choice made inside a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Draw {
    Coin(bool),
    Pick { of: usize, index: usize },
}

/// Where rule randomness comes from. Every implementation logs the draws it
/// hands out so they can be recorded in the trace.
pub trait DrawSource {
    fn coin(&mut self) -> Result<bool, EngineError>;
    /// Uniform index in `0..of`; `of` is at least 1.
    fn pick(&mut self, of: usize) -> Result<usize, EngineError>;
    fn take_log(&mut self) -> Vec<Draw>;
}

pub struct RngDraws {
    rng: ChaCha8Rng,
    log: Vec<Draw>,
}

impl RngDraws {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RngDraws { rng, log: Vec::new() }
    }
}

impl DrawSource for RngDraws {
    fn coin(&mut self) -> Result<bool, EngineError> {
        let c = self.rng.gen_bool(0.5);
        self.log.push(Draw::Coin(c));
        Ok(c)
    }

    fn pick(&mut self, of: usize) -> Result<usize, EngineError> {
        let index = self.rng.gen_range(0..of);
        self.log.push(Draw::Pick { of, index });
        Ok(index)
    }

    fn take_log(&mut self) -> Vec<Draw> {
        std::mem::take(&mut self.log)
    }
}

/// Re-issues recorded draws, failing on any mismatch.
pub struct ScriptedDraws {
    script: VecDeque<Draw>,
    log: Vec<Draw>,
}

impl ScriptedDraws {
    pub fn new(script: impl IntoIterator<Item = Draw>) -> Self {
        ScriptedDraws {
            script: script.into_iter().collect(),
            log: Vec::new(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.script.len()
    }
}

impl DrawSource for ScriptedDraws {
    fn coin(&mut self) -> Result<bool, EngineError> {
        match self.script.pop_front() {
            Some(Draw::Coin(c)) => {
                self.log.push(Draw::Coin(c));
                Ok(c)
            }
            Some(other) => Err(EngineError::DrawMismatch {
                recorded: other,
                requested: "coin".into(),
            }),
            None => Err(EngineError::DrawsExhausted),
        }
    }

    fn pick(&mut self, of: usize) -> Result<usize, EngineError> {
        match self.script.pop_front() {
            Some(d @ Draw::Pick { of: o, index }) if o == of && index < of => {
                self.log.push(d);
                Ok(index)
            }
            Some(other) => Err(EngineError::DrawMismatch {
                recorded: other,
                requested: format!("pick of {of}"),
            }),
            None => Err(EngineError::DrawsExhausted),
        }
    }

    fn take_log(&mut self) -> Vec<Draw> {
        std::mem::take(&mut self.log)
    }
}

/// A variable write, with old and new value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "var", rename_all = "snake_case")]
pub enum Change {
    Beta {
        node: usize,
        old: Option<u64>,
        new: Option<u64>,
    },
    Link {
        node: usize,
        port: Port,
        old: u64,
        new: u64,
    },
    Img {
        node: usize,
        port: Port,
        old: u64,
        new: u64,
    },
}

/// Which algorithm produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    A1,
    A2,
    RA1,
    /// Interleaved composition: one transition may mix both layers.
    Mixed,
}

/// A transition system driven by the daemon.
pub trait System {
    type Action: Clone + Ord + fmt::Display + FromStr;

    fn layer(&self) -> Layer;
    fn node_count(&self) -> usize;
    fn enabled(&self) -> EnabledMap<Self::Action>;
    /// Applies one transition; returns the writes it performed.
    fn apply(
        &mut self,
        selection: &Selection<Self::Action>,
        draws: &mut dyn DrawSource,
    ) -> Result<Vec<Change>, EngineError>;
    /// Potential after the last transition, when the system has one.
    fn potential(&self) -> Option<Potential>;
    /// Short name used for per-rule move counts.
    fn action_kind(action: &Self::Action) -> &'static str;
}

/// Rejects selections naming a node twice or out of range.
pub(crate) fn check_selection<A>(n: usize, selection: &Selection<A>) -> Result<(), EngineError> {
    let mut seen = vec![false; n];
    for (node, _) in selection {
        let slot = seen
            .get_mut(*node)
            .ok_or(EngineError::UnknownNode { node: *node })?;
        if *slot {
            return Err(EngineError::DuplicateSelection { node: *node });
        }
        *slot = true;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub moves: u64,
    pub transitions: u64,
    pub converged: bool,
    pub per_rule: BTreeMap<String, u64>,
}

/// Runs `system` under `daemon` until nothing is enabled or `max_moves` moves
/// have been made, appending one trace event per transition.
pub fn drive<S: System>(
    system: &mut S,
    daemon: &mut Daemon<S::Action>,
    draws: &mut dyn DrawSource,
    max_moves: u64,
    events: &mut Vec<TraceEvent>,
) -> Result<RunReport, EngineError> {
    let mut report = RunReport::default();
    loop {
        let enabled = system.enabled();
        if enabled.is_empty() {
            report.converged = true;
            return Ok(report);
        }
        if report.moves >= max_moves {
            return Ok(report);
        }
        let selection = daemon
            .select(&enabled)?
            .expect("nonempty enabled map yields a selection");
        let changes = system.apply(&selection, draws)?;
        report.moves += selection.len() as u64;
        report.transitions += 1;
        for (_, a) in &selection {
            *report.per_rule.entry(S::action_kind(a).to_string()).or_default() += 1;
        }
        events.push(TraceEvent {
            step: events.len() as u64,
            layer: system.layer(),
            selections: selection
                .iter()
                .map(|(node, a)| Selected {
                    node: *node,
                    action: a.to_string(),
                })
                .collect(),
            draws: draws.take_log(),
            changes,
            potential: system.potential(),
        });
    }
}
