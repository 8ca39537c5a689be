//! Move-count sweeps over graph size and daemon policy.

use rayon::prelude::*;
use serde::Serialize;

use crate::daemon::PolicyKind;
use crate::topology::Family;
use crate::trace::Algorithm;
use crate::verifier::{k_bound, IncreaseTally};

use super::{run_trial, FaultMode, GraphSource, HarnessError, TrialSpec, TrialStats};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub trials: usize,
    pub policies: Vec<PolicyKind>,
    /// Failure probability for the bound column; `None` means `1/n`.
    pub eps: Option<f64>,
    /// Resized to each `n`; random families redraw per trial.
    pub family: Family,
    pub algorithm: Algorithm,
    pub faults: FaultMode,
    /// Trial `i` uses seed `seed + i` for every `n` and policy.
    pub seed: u64,
    pub max_moves: Option<u64>,
}

/// Summary for one `(n, policy)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub policy: String,
    pub algorithm: String,
    pub trials: usize,
    pub converged: usize,
    pub mean_moves: f64,
    pub median_moves: f64,
    pub max_moves: u64,
    pub k_bound: u64,
    pub frac_within_k_bound: f64,
    /// `4 (n+1)^3`.
    pub cubic_bound: u64,
    pub frac_within_cubic: f64,
    /// The high-probability bound is only claimed for `n >= 6`.
    pub bound_applies: bool,
    /// `frac_within_cubic >= 1 - 1/n`, when it applies.
    pub bound_holds: Option<bool>,
    /// `8n (n^2/2 + n)`.
    pub expected_bound: f64,
    pub mean_within_expected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialStats>,
    pub single_steps: IncreaseTally,
}

fn median(sorted: &[u64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        k if k % 2 == 1 => sorted[k / 2] as f64,
        k => (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0,
    }
}

/// Runs every `(n, policy, trial)` combination on a work pool. Results come
/// back in input order, so the output does not depend on scheduling.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult, HarnessError> {
    if spec.trials == 0 || spec.ns.is_empty() || spec.policies.is_empty() {
        return Err(HarnessError::Input("sweep needs sizes, policies and at least one trial".into()));
    }
    if let Some(eps) = spec.eps {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(HarnessError::Input(format!("eps must lie in (0, 1], got {eps}")));
        }
    }
    let cells: Vec<(usize, PolicyKind)> = spec
        .ns
        .iter()
        .flat_map(|&n| spec.policies.iter().map(move |&p| (n, p)))
        .collect();
    let jobs: Vec<TrialSpec> = cells
        .iter()
        .flat_map(|&(n, policy)| {
            (0..spec.trials).map(move |i| {
                let mut t = TrialSpec::new(
                    GraphSource::Generated(spec.family.with_node_count(n)),
                    spec.algorithm,
                    policy,
                    spec.seed.wrapping_add(i as u64),
                )
                .with_faults(spec.faults);
                t.max_moves = spec.max_moves;
                t
            })
        })
        .collect();
    let runs: Vec<_> = jobs
        .par_iter()
        .map(|t| run_trial(t).map(|r| (r.stats, r.single_steps)))
        .collect::<Result<_, _>>()?;

    let mut single_steps = IncreaseTally::default();
    let mut trials = Vec::with_capacity(runs.len());
    for (stats, tally) in runs {
        single_steps.merge(tally);
        trials.push(stats);
    }
    let rows = cells
        .iter()
        .zip(trials.chunks(spec.trials))
        .map(|(&(n, policy), chunk)| {
            let eps = spec.eps.unwrap_or(1.0 / n as f64);
            let kb = k_bound(n, eps).map_err(|e| HarnessError::Input(e.to_string()))?;
            let cubic = 4 * (n as u64 + 1).pow(3);
            let mut moves: Vec<u64> = chunk.iter().map(|s| s.moves).collect();
            moves.sort_unstable();
            let frac = |bound: u64| {
                chunk.iter().filter(|s| s.converged && s.moves <= bound).count() as f64 / chunk.len() as f64
            };
            let mean = moves.iter().sum::<u64>() as f64 / moves.len() as f64;
            let nf = n as f64;
            let expected = 8.0 * nf * (nf * nf / 2.0 + nf);
            let within_cubic = frac(cubic);
            let applies = n >= 6;
            Ok(SweepRow {
                n,
                policy: policy.to_string(),
                algorithm: spec.algorithm.to_string(),
                trials: chunk.len(),
                converged: chunk.iter().filter(|s| s.converged).count(),
                mean_moves: mean,
                median_moves: median(&moves),
                max_moves: moves.last().copied().unwrap_or(0),
                k_bound: kb,
                frac_within_k_bound: frac(kb),
                cubic_bound: cubic,
                frac_within_cubic: within_cubic,
                bound_applies: applies,
                bound_holds: applies.then(|| within_cubic >= 1.0 - 1.0 / nf),
                expected_bound: expected,
                mean_within_expected: mean <= expected,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SweepResult { rows, trials, single_steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ns: Vec<usize>, trials: usize) -> SweepSpec {
        SweepSpec {
            ns,
            trials,
            policies: vec![PolicyKind::Synchronous, PolicyKind::AdversarialGreedy],
            eps: None,
            family: Family::RandomConnected { n: 0, p: 0.4 },
            algorithm: Algorithm::A1,
            faults: FaultMode::UniformRandom,
            seed: 100,
            max_moves: None,
        }
    }

    #[test]
    fn rows_cover_every_cell_and_guard_small_n() {
        let out = sweep(&spec(vec![2, 6], 30)).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.trials.len(), 120);
        let small = &out.rows[0];
        assert_eq!((small.n, small.bound_applies, small.bound_holds), (2, false, None));
        let big = &out.rows[2];
        assert_eq!(big.cubic_bound, 4 * 7 * 7 * 7);
        assert_eq!(big.k_bound, 1372);
        assert_eq!(big.bound_holds, Some(true));
        assert!(out.rows.iter().all(|r| r.mean_within_expected && r.converged == r.trials));
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = sweep(&spec(vec![5], 10)).unwrap();
        let b = sweep(&spec(vec![5], 10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[1, 3, 10]), 3.0);
        assert_eq!(median(&[1, 3, 10, 20]), 6.5);
        assert_eq!(median(&[]), 0.0);
    }
}
