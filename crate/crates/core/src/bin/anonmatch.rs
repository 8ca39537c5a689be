use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anonmatch::composed::names_to_ports;
use anonmatch::daemon::PolicyKind;
use anonmatch::harness::{
    append_csv, csv_string, run_trial, sweep, verify_replay, FaultMode, GraphSource, HarnessError, SweepSpec, TrialSpec,
};
use anonmatch::linkname::is_stable_a2;
use anonmatch::matching::is_stable;
use anonmatch::topology::{AnonymousGraph, Family};
use anonmatch::trace::{Algorithm, InitialState, Trace, TraceState};
use anonmatch::verifier::{analyze_trace, check_ln, check_m, model_check, McAlgorithm, McError, McOptions};

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_MONITOR: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_SPEC: u8 = 5;

/// Self-stabilizing maximal matching on anonymous networks.
///
/// Exit codes: 0 all checks passed, 2 bad input, 3 monitor violation or
/// replay divergence, 4 non-convergence, 5 failed specification check.
#[derive(Parser)]
#[command(name = "anonmatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial.
    Run(RunArgs),
    /// Run trials over sizes and policies and summarize move counts.
    Sweep(SweepArgs),
    /// Check a trace file, or a graph with a state file.
    Verify(VerifyArgs),
    /// Exhaustively explore a small graph.
    Modelcheck(ModelcheckArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// Graph file: `n m` on the first line, then `u v [port_u port_v]` per edge.
    #[arg(long, conflicts_with = "gen")]
    graph: Option<PathBuf>,
    /// Generator, e.g. `ring,8` or `random,n=10,p=0.3`.
    #[arg(long)]
    gen: Option<Family>,
}

impl GraphArgs {
    fn source(&self) -> Result<GraphSource, HarnessError> {
        match (&self.graph, self.gen) {
            (Some(p), None) => Ok(GraphSource::File(p.clone())),
            (None, Some(f)) => Ok(GraphSource::Generated(f)),
            _ => Err(HarnessError::Input("give exactly one of --graph and --gen".into())),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value = "a1")]
    algo: Algorithm,
    #[arg(long, default_value = "sync")]
    daemon: PolicyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// all-null, random, preset:pointer-chain or preset:duplicate-links.
    #[arg(long, default_value = "all-null")]
    faults: FaultMode,
    /// Defaults to 64 (n+1)^3.
    #[arg(long)]
    max_moves: Option<u64>,
    /// Schedule both layers of the composition together.
    #[arg(long)]
    interleaved: bool,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Family template; its node count is replaced by each of `--ns`.
    #[arg(long, default_value = "random,n=2,p=0.3")]
    gen: Family,
    #[arg(long, value_delimiter = ',', default_value = "6,10,14")]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "sync,subset,seq,adversarial")]
    daemon: Vec<PolicyKind>,
    /// Defaults to 1/n.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value = "a1")]
    algo: Algorithm,
    #[arg(long, default_value = "random")]
    faults: FaultMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_moves: Option<u64>,
    /// Summary rows; printed to stdout when absent.
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Per-trial rows.
    #[arg(long)]
    trials_csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trace file to monitor and replay.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphArgs,
    /// JSON state (`{"beta": {...}, "registers": {...}}`) to check against the graph.
    #[arg(long, requires = "graph")]
    state: Option<PathBuf>,
}

#[derive(Args)]
struct ModelcheckArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// a1 or a2.
    #[arg(long, default_value = "a1")]
    algo: Algorithm,
    #[arg(long)]
    max_states: Option<usize>,
    /// Where to write a counterexample trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    trace.write_jsonl(&mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<u8, HarnessError> {
    let mut spec = TrialSpec::new(a.graph.source()?, a.algo, a.daemon, a.seed).with_faults(a.faults);
    spec.max_moves = a.max_moves;
    spec.interleaved = a.interleaved;
    let run = match run_trial(&spec) {
        Ok(run) => run,
        Err(e) => {
            if let (Some(path), Some(trace)) = (&a.trace_out, e.trace()) {
                write_trace(path, trace)?;
            }
            return Err(e);
        }
    };
    if let Some(path) = &a.trace_out {
        write_trace(path, &run.trace)?;
    }
    if let Some(path) = &a.csv_out {
        append_csv(path, &[run.stats.clone()])?;
    }
    println!("{}", serde_json::to_string(&run.stats).expect("stats serialize"));
    Ok(if run.stats.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_sweep(a: SweepArgs) -> Result<u8, HarnessError> {
    let spec = SweepSpec {
        ns: a.ns,
        trials: a.trials,
        policies: a.daemon,
        eps: a.eps,
        family: a.gen,
        algorithm: a.algo,
        faults: a.faults,
        seed: a.seed,
        max_moves: a.max_moves,
    };
    let out = sweep(&spec)?;
    match &a.csv_out {
        Some(path) => append_csv(path, &out.rows)?,
        None => print!("{}", csv_string(&out.rows)?),
    }
    if let Some(path) = &a.trials_csv_out {
        append_csv(path, &out.trials)?;
    }
    if out.rows.iter().any(|r| r.converged < r.trials) {
        return Ok(EXIT_NOT_CONVERGED);
    }
    let bounds_ok = out
        .rows
        .iter()
        .all(|r| r.bound_holds != Some(false) && r.mean_within_expected);
    Ok(if bounds_ok { 0 } else { EXIT_SPEC })
}

/// Checks a final or loaded state: `Ok(true)` if stable and correct,
/// `Ok(false)` if not yet stable.
fn check_state(g: &AnonymousGraph, algo: Algorithm, state: &TraceState) -> Result<bool, String> {
    let beta = match (algo, &state.beta, &state.registers) {
        (Algorithm::A2, _, _) => None,
        (Algorithm::A1, Some(b), _) => Some(b.clone()),
        (Algorithm::Composed, Some(b), Some(r)) => Some(names_to_ports(g, r, b)),
        _ => return Err("state lacks the variables of its algorithm".into()),
    };
    if let Some(regs) = &state.registers {
        if !is_stable_a2(g, regs) {
            return Ok(false);
        }
        let r = check_ln(g, regs);
        if !r.passed() {
            return Err(format!("naming specification fails: {r:?}"));
        }
    }
    if let Some(b) = &beta {
        if !is_stable(g, b) {
            return Ok(false);
        }
        let r = check_m(g, b);
        if !r.passed() {
            return Err(format!("matching specification fails: {r:?}"));
        }
    }
    Ok(true)
}

fn cmd_verify(a: VerifyArgs) -> Result<u8, HarnessError> {
    if let Some(path) = &a.trace {
        let trace = Trace::read_jsonl(BufReader::new(File::open(path)?))?;
        let analysis = analyze_trace(&trace)?;
        for v in &analysis.violations {
            println!("violation at step {}: {:?}", v.step, v.kind);
        }
        if !analysis.violations.is_empty() {
            return Ok(EXIT_MONITOR);
        }
        verify_replay(&trace)?;
        println!("monitors clean, replay reproduces {} steps", trace.events.len());
        let g = trace.graph()?;
        let mut state = TraceState::initial(&trace, &g)?;
        for ev in &trace.events {
            state.apply(&g, ev)?;
        }
        return report_state(&g, trace.header.algorithm, &state);
    }
    let path = a
        .state
        .as_ref()
        .ok_or_else(|| HarnessError::Input("give --trace, or a graph with --state".into()))?;
    let g = a.graph.source()?.load(0)?;
    let init: InitialState = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| HarnessError::Input(format!("state file: {e}")))?;
    let algo = match (&init.beta, &init.registers) {
        (Some(_), Some(_)) => Algorithm::Composed,
        (Some(_), None) => Algorithm::A1,
        (None, Some(_)) => Algorithm::A2,
        (None, None) => return Err(HarnessError::Input("state file is empty".into())),
    };
    if init.beta.as_ref().is_some_and(|b| b.beta.len() != g.node_count()) || init.registers.as_ref().is_some_and(|r| !r.fits(&g)) {
        return Err(HarnessError::Input("state does not match the graph".into()));
    }
    let state = TraceState {
        beta: init.beta,
        registers: init.registers,
    };
    report_state(&g, algo, &state)
}

fn report_state(g: &AnonymousGraph, algo: Algorithm, state: &TraceState) -> Result<u8, HarnessError> {
    Ok(match check_state(g, algo, state) {
        Ok(true) => {
            println!("final state is stable and meets the specification");
            0
        }
        Ok(false) => {
            println!("final state is not stable");
            EXIT_NOT_CONVERGED
        }
        Err(msg) => {
            println!("{msg}");
            EXIT_SPEC
        }
    })
}

fn cmd_modelcheck(a: ModelcheckArgs) -> Result<u8, HarnessError> {
    let g = a.graph.source()?.load(0)?;
    let alg = match a.algo {
        Algorithm::A1 => McAlgorithm::A1,
        Algorithm::A2 => McAlgorithm::A2,
        Algorithm::Composed => return Err(HarnessError::Input("model checking covers a1 and a2".into())),
    };
    let mut opts = McOptions::default();
    if let Some(s) = a.max_states {
        opts.max_states = s;
    }
    match model_check(&g, alg, &opts) {
        Ok(report) => {
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(0)
        }
        Err(McError::TooLarge(msg)) => Err(HarnessError::Input(format!("state space too large: {msg}"))),
        Err(McError::Counterexample(cx)) => {
            println!("property violated: {}", cx.property);
            if let Some(path) = &a.trace_out {
                write_trace(path, &cx.trace)?;
            }
            Ok(EXIT_SPEC)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_BAD_INPUT } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Modelcheck(a) => cmd_modelcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
