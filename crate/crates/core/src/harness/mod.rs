//! Trial orchestration: fault injection, engine selection, monitors, stats,
//! replay and parameter sweeps.

mod faults;
mod sweep;

use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composed::{names_to_ports, run_composed, ComposedCaps, ComposedState, InterleavedSystem};
use crate::daemon::{Daemon, PolicyKind, Selection};
use crate::engine::{drive, DrawSource, EngineError, Layer, RngDraws, RunReport, ScriptedDraws};
use crate::linkname::{LinkNameSystem, RegisterFile};
use crate::matching::{MatchingConfiguration, MatchingSystem};
use crate::rng::{stream, Stream};
use crate::topology::{generate, AnonymousGraph, Family, GraphError};
use crate::trace::{Algorithm, InitialState, Trace, TraceError, TraceEvent, TraceHeader};
use crate::verifier::{analyze_trace, check_ln, check_m, k_bound, potential, IncreaseTally, Violation};

pub use faults::{inject_faults, FaultMode, Preset, GARBAGE_MARGIN};
pub use sweep::{sweep, SweepResult, SweepRow, SweepSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    /// Random families draw their edges from the trial seed.
    Generated(Family),
    Given(AnonymousGraph),
}

impl GraphSource {
    pub fn load(&self, seed: u64) -> Result<AnonymousGraph, HarnessError> {
        match self {
            GraphSource::File(path) => {
                let text = std::fs::read_to_string(path)?;
                Ok(AnonymousGraph::parse(&text)?)
            }
            GraphSource::Generated(f) => Ok(generate(*f, seed)?),
            GraphSource::Given(g) => Ok(g.clone()),
        }
    }
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSource::File(p) => write!(f, "{}", p.display()),
            GraphSource::Generated(fam) => fam.fmt(f),
            GraphSource::Given(g) => write!(f, "given({} nodes)", g.node_count()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub graph: GraphSource,
    pub algorithm: Algorithm,
    /// Composition only: schedule both layers together instead of in phases.
    pub interleaved: bool,
    pub policy: PolicyKind,
    pub seed: u64,
    pub faults: FaultMode,
    /// Defaults to [`default_move_cap`].
    pub max_moves: Option<u64>,
}

impl TrialSpec {
    pub fn new(graph: GraphSource, algorithm: Algorithm, policy: PolicyKind, seed: u64) -> Self {
        TrialSpec {
            graph,
            algorithm,
            interleaved: false,
            policy,
            seed,
            faults: FaultMode::AllNull,
            max_moves: None,
        }
    }

    pub fn with_faults(mut self, faults: FaultMode) -> Self {
        self.faults = faults;
        self
    }

    pub fn with_max_moves(mut self, cap: u64) -> Self {
        self.max_moves = Some(cap);
        self
    }

    pub fn interleaved(mut self) -> Self {
        self.interleaved = true;
        self
    }
}

/// `64 (n+1)^3` moves.
pub fn default_move_cap(n: usize) -> u64 {
    64 * (n as u64 + 1).pow(3)
}

/// One CSV row per trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialStats {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub policy: String,
    pub algorithm: String,
    pub faults: String,
    pub moves: u64,
    pub naming_moves: u64,
    pub matching_moves: u64,
    pub transitions: u64,
    pub converged: bool,
    pub potential_good: Option<usize>,
    pub potential_almost_good: Option<usize>,
    pub k_bound: u64,
    /// Matching moves within `k_bound(n, 1/n)` and naming moves within `20m`,
    /// for whichever layers the algorithm has.
    pub within_bound: bool,
    pub marriage: u64,
    pub abandonment: u64,
    pub seduction: u64,
    pub r0: u64,
    pub ra: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRun {
    pub trace: Trace,
    pub stats: TrialStats,
    pub single_steps: IncreaseTally,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad graph: {0}")]
    Graph(#[from] GraphError),
    #[error("bad trace: {0}")]
    Trace(#[from] TraceError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad input: {0}")]
    Input(String),
    #[error("engine error: {0}")]
    Engine(#[from] EngineError),
    #[error("{} monitor violation(s), first at step {}: {:?}", .violations.len(), .violations[0].step, .violations[0].kind)]
    Monitor {
        violations: Vec<Violation>,
        trace: Box<Trace>,
    },
    #[error("final state fails the specification: {detail}")]
    SpecCheck { detail: String, trace: Box<Trace> },
    #[error("replay diverges from the recording at step {step}")]
    ReplayDiverged { step: u64 },
}

impl HarnessError {
    /// Process exit code: 2 bad input, 3 monitor or replay failure, 5 failed
    /// specification check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_)
            | HarnessError::Graph(_)
            | HarnessError::Trace(_)
            | HarnessError::Csv(_)
            | HarnessError::Input(_)
            | HarnessError::Engine(_) => 2,
            HarnessError::Monitor { .. } | HarnessError::ReplayDiverged { .. } => 3,
            HarnessError::SpecCheck { .. } => 5,
        }
    }

    /// The offending trace, for failures that have one.
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            HarnessError::Monitor { trace, .. } | HarnessError::SpecCheck { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// Where selections come from: live daemons, or a recorded trace.
enum Schedule<'t> {
    Live { policy: PolicyKind, seed: u64, cap: u64 },
    Replay(&'t Trace),
}

impl Schedule<'_> {
    fn daemon<A>(&self, layer: Layer, which: Stream) -> Result<Daemon<A>, HarnessError>
    where
        A: Clone + Ord + fmt::Display + FromStr<Err = String>,
    {
        match *self {
            Schedule::Live { policy, seed, .. } => Ok(Daemon::new(policy, stream(seed, which))),
            Schedule::Replay(trace) => {
                let script = trace
                    .events
                    .iter()
                    .filter(|e| e.layer == layer)
                    .map(|e| {
                        e.selections
                            .iter()
                            .map(|s| {
                                s.action
                                    .parse::<A>()
                                    .map(|a| (s.node, a))
                                    .map_err(|msg| TraceError::Malformed { step: e.step, msg })
                            })
                            .collect::<Result<Selection<A>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Daemon::replay(script, stream(trace.header.seed, which)))
            }
        }
    }

    fn cap(&self, layer: Layer) -> u64 {
        match *self {
            Schedule::Live { cap, .. } => cap,
            Schedule::Replay(trace) => trace
                .events
                .iter()
                .filter(|e| e.layer == layer)
                .map(|e| e.selections.len() as u64)
                .sum(),
        }
    }
}

struct Execution {
    naming: RunReport,
    matching: RunReport,
    /// Port-level pointers, for algorithms with a matching layer.
    beta: Option<MatchingConfiguration>,
    registers: Option<RegisterFile>,
}

fn missing(what: &str) -> HarnessError {
    HarnessError::Input(format!("initial state has no {what}"))
}

fn execute(
    g: &AnonymousGraph,
    header: &TraceHeader,
    schedule: &Schedule,
    draws: &mut dyn DrawSource,
    events: &mut Vec<TraceEvent>,
) -> Result<Execution, HarnessError> {
    let init = &header.initial;
    let check_fit = |beta: &MatchingConfiguration| {
        if beta.beta.len() == g.node_count() {
            Ok(())
        } else {
            Err(HarnessError::Input("initial pointers do not match the graph".into()))
        }
    };
    let check_regs = |regs: &RegisterFile| {
        if regs.fits(g) {
            Ok(())
        } else {
            Err(HarnessError::Input("initial registers do not match the graph".into()))
        }
    };
    match (header.algorithm, header.interleaved) {
        (Algorithm::A1, _) => {
            let beta = init.beta.clone().ok_or_else(|| missing("pointers"))?;
            check_fit(&beta)?;
            let mut sys = MatchingSystem::new(g, beta);
            let mut daemon = schedule.daemon(Layer::A1, Stream::Daemon)?;
            let report = drive(&mut sys, &mut daemon, draws, schedule.cap(Layer::A1), events)?;
            Ok(Execution {
                naming: RunReport::default(),
                matching: report,
                beta: Some(sys.into_config()),
                registers: None,
            })
        }
        (Algorithm::A2, _) => {
            let regs = init.registers.clone().ok_or_else(|| missing("registers"))?;
            check_regs(&regs)?;
            let mut sys = LinkNameSystem::new(g, regs);
            let mut daemon = schedule.daemon(Layer::A2, Stream::Daemon)?;
            let report = drive(&mut sys, &mut daemon, draws, schedule.cap(Layer::A2), events)?;
            Ok(Execution {
                naming: report,
                matching: RunReport::default(),
                beta: None,
                registers: Some(sys.into_parts().0),
            })
        }
        (Algorithm::Composed, interleaved) => {
            let beta = init.beta.clone().ok_or_else(|| missing("pointers"))?;
            let regs = init.registers.clone().ok_or_else(|| missing("registers"))?;
            check_fit(&beta)?;
            check_regs(&regs)?;
            let state = ComposedState::new(g, regs, beta);
            let (naming, matching, state) = if interleaved {
                let mut sys = InterleavedSystem::new(g, state);
                let mut daemon = schedule.daemon(Layer::Mixed, Stream::Daemon)?;
                let report = drive(&mut sys, &mut daemon, draws, schedule.cap(Layer::Mixed), events)?;
                // both layers share one report in this mode
                (report.clone(), report, sys.into_state())
            } else {
                let mut lower = schedule.daemon(Layer::A2, Stream::Daemon)?;
                let mut upper = schedule.daemon(Layer::RA1, Stream::DaemonUpper)?;
                let caps = ComposedCaps {
                    naming_moves: schedule.cap(Layer::A2),
                    matching_moves: schedule.cap(Layer::RA1),
                };
                let out = run_composed(g, state, &mut lower, &mut upper, draws, caps, events)?;
                (out.naming, out.matching, out.state)
            };
            Ok(Execution {
                naming,
                matching,
                beta: Some(names_to_ports(g, &state.registers, &state.beta)),
                registers: Some(state.registers),
            })
        }
    }
}

fn count(report: &RunReport, kind: &str) -> u64 {
    report.per_rule.get(kind).copied().unwrap_or(0)
}

fn stats_for(g: &AnonymousGraph, header: &TraceHeader, exec: &Execution) -> TrialStats {
    let n = g.node_count();
    let m = g.edge_count();
    let interleaved = header.algorithm == Algorithm::Composed && header.interleaved;
    let kb = k_bound(n, 1.0 / n as f64).expect("n >= 1 and eps in (0,1]");
    let (naming_moves, matching_moves, moves, transitions, converged) = if interleaved {
        let r = &exec.matching;
        let naming = count(r, "r0") + count(r, "ra");
        (naming, r.moves - naming, r.moves, r.transitions, r.converged)
    } else {
        let (a, b) = (&exec.naming, &exec.matching);
        let converged = match header.algorithm {
            Algorithm::A1 => b.converged,
            Algorithm::A2 => a.converged,
            Algorithm::Composed => a.converged && b.converged,
        };
        (a.moves, b.moves, a.moves + b.moves, a.transitions + b.transitions, converged)
    };
    let naming_ok = naming_moves <= 20 * m as u64;
    let matching_ok = matching_moves <= kb;
    let within_bound = converged
        && match header.algorithm {
            Algorithm::A1 => matching_ok,
            Algorithm::A2 => naming_ok,
            Algorithm::Composed => naming_ok && matching_ok,
        };
    let f = exec.beta.as_ref().map(|b| potential(g, b));
    let rules = if interleaved {
        vec![&exec.matching]
    } else {
        vec![&exec.naming, &exec.matching]
    };
    let total = |kind: &str| rules.iter().map(|r| count(r, kind)).sum();
    TrialStats {
        n,
        m,
        seed: header.seed,
        policy: header.policy.to_string(),
        algorithm: if interleaved {
            "composed-interleaved".into()
        } else {
            header.algorithm.to_string()
        },
        faults: header.faults.clone(),
        moves,
        naming_moves,
        matching_moves,
        transitions,
        converged,
        potential_good: f.map(|p| p.good),
        potential_almost_good: f.map(|p| p.almost_good),
        k_bound: kb,
        within_bound,
        marriage: total("marriage"),
        abandonment: total("abandonment"),
        seduction: total("seduction"),
        r0: total("r0"),
        ra: total("ra"),
    }
}

/// Runs one trial with monitors attached. A monitor violation or a converged
/// run whose final state fails its specification is an error carrying the
/// trace; hitting the move cap is not.
pub fn run_trial(spec: &TrialSpec) -> Result<TrialRun, HarnessError> {
    if spec.policy == PolicyKind::Replay {
        return Err(HarnessError::Input("the replay policy needs a recorded trace".into()));
    }
    if spec.interleaved && spec.algorithm != Algorithm::Composed {
        return Err(HarnessError::Input("interleaving applies to the composition only".into()));
    }
    let g = spec.graph.load(spec.seed)?;
    let n = g.node_count();
    let initial: InitialState = inject_faults(&g, spec.algorithm, spec.faults, &mut stream(spec.seed, Stream::Faults));
    let header = TraceHeader {
        algorithm: spec.algorithm,
        interleaved: spec.interleaved,
        seed: spec.seed,
        policy: spec.policy,
        faults: spec.faults.to_string(),
        n,
        edges: g.edge_specs(),
        initial,
    };
    let schedule = Schedule::Live {
        policy: spec.policy,
        seed: spec.seed,
        cap: spec.max_moves.unwrap_or_else(|| default_move_cap(n)),
    };
    let mut draws = RngDraws::new(stream(spec.seed, Stream::Rules));
    let mut events = Vec::new();
    let exec = execute(&g, &header, &schedule, &mut draws, &mut events)?;
    let trace = Trace { header, events };
    let stats = stats_for(&g, &trace.header, &exec);
    let analysis = analyze_trace(&trace)?;
    if !analysis.violations.is_empty() {
        return Err(HarnessError::Monitor {
            violations: analysis.violations,
            trace: Box::new(trace),
        });
    }
    if stats.converged {
        if let Some(detail) = spec_failure(&g, &exec) {
            return Err(HarnessError::SpecCheck {
                detail,
                trace: Box::new(trace),
            });
        }
    }
    Ok(TrialRun {
        trace,
        stats,
        single_steps: analysis.single_steps,
    })
}

fn spec_failure(g: &AnonymousGraph, exec: &Execution) -> Option<String> {
    if let Some(regs) = &exec.registers {
        let r = check_ln(g, regs);
        if !r.passed() {
            return Some(format!("naming: {r:?}"));
        }
    }
    if let Some(beta) = &exec.beta {
        let r = check_m(g, beta);
        if !r.passed() {
            return Some(format!("matching: {r:?}"));
        }
    }
    None
}

/// Re-executes `trace` from its initial state with its own selections and
/// random draws, returning the regenerated trace.
pub fn replay(trace: &Trace) -> Result<Trace, HarnessError> {
    let g = trace.graph()?;
    let mut draws = ScriptedDraws::new(trace.events.iter().flat_map(|e| e.draws.iter().copied()));
    let mut events = Vec::new();
    execute(&g, &trace.header, &Schedule::Replay(trace), &mut draws, &mut events)?;
    Ok(Trace {
        header: trace.header.clone(),
        events,
    })
}

/// Replays `trace` and fails at the first step that does not reproduce.
pub fn verify_replay(trace: &Trace) -> Result<(), HarnessError> {
    let again = replay(trace)?;
    let steps = trace.events.len().max(again.events.len());
    for i in 0..steps {
        if trace.events.get(i) != again.events.get(i) {
            return Err(HarnessError::ReplayDiverged { step: i as u64 });
        }
    }
    Ok(())
}

/// Appends `rows` to a CSV file, writing the header row only when the file is
/// new or empty.
pub fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows as CSV text with a header row.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Input(e.to_string()))
}
