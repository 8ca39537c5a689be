//! Monitors over recorded traces.
//!
//! They rebuild every configuration from the trace itself, so a live run, a
//! replay and an imported file all go through the same checks:
//!
//! * the potential never decreases across a matching transition;
//! * a good edge is never broken and its endpoints are never selected;
//! * every `n + 1` consecutive matching transitions select at least one
//!   Single or Indecisive node;
//! * every selected rule is enabled, recorded old values match, and each
//!   layer only writes its own variables.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::composed::{enabled_rule_ra1, names_to_ports};
use crate::engine::{Change, Layer};
use crate::linkname::LinkAction;
use crate::matching::{enabled_rule, MatchingConfiguration, Rule};
use crate::topology::AnonymousGraph;
use crate::trace::{Trace, TraceError, TraceEvent, TraceState};

use super::{classify, matched_pairs, potential, NodeClass, Potential};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    PotentialDecrease { before: Potential, after: Potential },
    GoodEdgeBroken { u: usize, v: usize },
    GoodEdgeNodeSelected { node: usize },
    /// `n + 1` transitions, starting at `from`, without a progress node.
    NoProgressWindow { from: u64 },
    RuleNotEnabled { node: usize, action: String },
    StaleWrite { detail: String },
    PotentialMismatch { recorded: Potential, actual: Potential },
    LayerViolation { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub step: u64,
    pub kind: ViolationKind,
}

/// Transitions in which at least one Single node was selected, and how many
/// of them strictly increased the potential.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IncreaseTally {
    pub trials: u64,
    pub increases: u64,
}

impl IncreaseTally {
    pub fn merge(&mut self, other: IncreaseTally) {
        self.trials += other.trials;
        self.increases += other.increases;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TraceAnalysis {
    pub violations: Vec<Violation>,
    pub single_steps: IncreaseTally,
}

pub fn monitor_trace(trace: &Trace) -> Result<Vec<Violation>, TraceError> {
    analyze_trace(trace).map(|a| a.violations)
}

/// Port-level view of the matching layer in `state`.
fn port_config(layer: Layer, g: &AnonymousGraph, state: &TraceState) -> Option<MatchingConfiguration> {
    let beta = state.beta.as_ref()?;
    match layer {
        Layer::A1 => Some(beta.clone()),
        Layer::RA1 | Layer::Mixed => Some(names_to_ports(g, state.registers.as_ref()?, beta)),
        Layer::A2 => None,
    }
}

pub fn analyze_trace(trace: &Trace) -> Result<TraceAnalysis, TraceError> {
    let g = trace.graph()?;
    let n = g.node_count();
    let mut state = TraceState::initial(trace, &g)?;
    let mut out = TraceAnalysis::default();
    let mut quiet_run: u64 = 0;
    for ev in &trace.events {
        let mut flag = |kind| out.violations.push(Violation { step: ev.step, kind });
        check_layering(ev, &mut flag);
        for sel in &ev.selections {
            if sel.node >= n {
                return Err(TraceError::Malformed {
                    step: ev.step,
                    msg: format!("selected node {} out of range", sel.node),
                });
            }
        }
        let matching = matches!(ev.layer, Layer::A1 | Layer::RA1);
        let before = if matching {
            let cfg = port_config(ev.layer, &g, &state).ok_or_else(|| TraceError::Malformed {
                step: ev.step,
                msg: "matching event without matching state".into(),
            })?;
            let mut progress = false;
            let mut single = false;
            for sel in &ev.selections {
                let rule: Rule = sel.action.parse().map_err(|msg| TraceError::Malformed { step: ev.step, msg })?;
                let enabled = match ev.layer {
                    Layer::A1 => enabled_rule(&g, &cfg, sel.node),
                    _ => enabled_rule_ra1(
                        &g,
                        state.registers.as_ref().expect("checked above"),
                        state.beta.as_ref().expect("checked above"),
                        sel.node,
                    ),
                };
                if enabled != Some(rule) {
                    flag(ViolationKind::RuleNotEnabled {
                        node: sel.node,
                        action: sel.action.clone(),
                    });
                }
                let class = classify(&g, &cfg, sel.node);
                progress |= class.is_progress();
                single |= class == NodeClass::Single;
                if class == NodeClass::InGoodEdge {
                    flag(ViolationKind::GoodEdgeNodeSelected { node: sel.node });
                }
            }
            Some((cfg, progress, single))
        } else {
            None
        };
        for stale in state.apply(&g, ev)? {
            flag(ViolationKind::StaleWrite {
                detail: format!("{:?} but state held {}", stale.change, stale.actual),
            });
        }
        let Some((cfg_before, progress, single)) = before else {
            continue;
        };
        let cfg_after = port_config(ev.layer, &g, &state).expect("state kinds do not change");
        let (p0, p1) = (potential(&g, &cfg_before), potential(&g, &cfg_after));
        if p1 < p0 {
            flag(ViolationKind::PotentialDecrease { before: p0, after: p1 });
        }
        if let Some(rec) = ev.potential {
            if rec != p1 {
                flag(ViolationKind::PotentialMismatch { recorded: rec, actual: p1 });
            }
        }
        let after_pairs: BTreeSet<(usize, usize)> = matched_pairs(&g, &cfg_after).into_iter().collect();
        for (u, v) in matched_pairs(&g, &cfg_before) {
            if !after_pairs.contains(&(u, v)) {
                flag(ViolationKind::GoodEdgeBroken { u, v });
            }
        }
        if single {
            out.single_steps.trials += 1;
            out.single_steps.increases += u64::from(p0 < p1);
        }
        if progress {
            quiet_run = 0;
        } else {
            quiet_run += 1;
            if quiet_run > n as u64 {
                flag(ViolationKind::NoProgressWindow {
                    from: ev.step + 1 - quiet_run,
                });
                quiet_run = 0;
            }
        }
    }
    Ok(out)
}

fn check_layering(ev: &TraceEvent, flag: &mut impl FnMut(ViolationKind)) {
    for ch in &ev.changes {
        let ok = match (ev.layer, ch) {
            (Layer::A1 | Layer::RA1, Change::Beta { .. }) => true,
            (Layer::A2, Change::Link { .. } | Change::Img { .. }) => true,
            (Layer::Mixed, _) => true,
            _ => false,
        };
        if !ok {
            flag(ViolationKind::LayerViolation {
                detail: format!("{:?} layer wrote {ch:?}", ev.layer),
            });
        }
    }
    if ev.layer == Layer::A2 {
        for sel in &ev.selections {
            if sel.action.parse::<LinkAction>().is_err() {
                flag(ViolationKind::LayerViolation {
                    detail: format!("naming layer selected {:?}", sel.action),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daemon::PolicyKind;
    use crate::engine::Draw;
    use crate::trace::{Algorithm, InitialState, Selected, TraceHeader};
    use crate::topology::{generate, Family};

    fn header(g: &AnonymousGraph, beta: Vec<Option<u64>>) -> TraceHeader {
        TraceHeader {
            algorithm: Algorithm::A1,
            interleaved: false,
            seed: 0,
            policy: PolicyKind::Replay,
            faults: "forged".into(),
            n: g.node_count(),
            edges: g.edge_specs(),
            initial: InitialState {
                beta: Some(MatchingConfiguration { beta }),
                registers: None,
            },
        }
    }

    fn event(step: u64, sel: &[(usize, &str)], changes: Vec<Change>) -> TraceEvent {
        TraceEvent {
            step,
            layer: Layer::A1,
            selections: sel
                .iter()
                .map(|(n, a)| Selected { node: *n, action: a.to_string() })
                .collect(),
            draws: vec![],
            changes,
            potential: None,
        }
    }

    #[test]
    fn flags_a_broken_good_edge() {
        // path 0-1-2 with 0 and 1 matched; node 0 forged to drop its pointer
        let g = generate(Family::Path { n: 3 }, 0).unwrap();
        let trace = Trace {
            header: header(&g, vec![Some(1), Some(1), None]),
            events: vec![event(0, &[(0, "abandonment")], vec![Change::Beta { node: 0, old: Some(1), new: None }])],
        };
        let v = monitor_trace(&trace).unwrap();
        let kinds: Vec<&ViolationKind> = v.iter().map(|v| &v.kind).collect();
        assert!(kinds.contains(&&ViolationKind::GoodEdgeBroken { u: 0, v: 1 }));
        assert!(kinds.contains(&&ViolationKind::GoodEdgeNodeSelected { node: 0 }));
        assert!(kinds.contains(&&ViolationKind::RuleNotEnabled { node: 0, action: "abandonment".into() }));
        assert!(kinds
            .iter()
            .any(|k| matches!(k, ViolationKind::PotentialDecrease { .. })));
    }

    #[test]
    fn flags_a_forged_run_of_abandonments() {
        // path 0-1-2: 0 points at 1, 1 and 2 matched. n+1 = 4 abandonments by
        // node 0 cannot be recorded consistently.
        let g = generate(Family::Path { n: 3 }, 0).unwrap();
        let events = (0..4)
            .map(|i| event(i, &[(0, "abandonment")], vec![Change::Beta { node: 0, old: Some(1), new: None }]))
            .collect();
        let trace = Trace {
            header: header(&g, vec![Some(1), Some(2), Some(1)]),
            events,
        };
        let v = monitor_trace(&trace).unwrap();
        assert!(v.iter().any(|v| matches!(v.kind, ViolationKind::StaleWrite { .. })));
        assert!(v.iter().any(|v| matches!(v.kind, ViolationKind::RuleNotEnabled { .. })));
        // after the first step node 0 is Single, so the forged selections
        // count as progress: no window violation, but inconsistency is caught
        assert_eq!(v.iter().filter(|v| v.step == 0).count(), 0);
    }

    #[test]
    fn flags_a_quiet_window() {
        // K2 with a forged sequence selecting a matched node without changes
        let g = generate(Family::Path { n: 2 }, 0).unwrap();
        let events = (0..3).map(|i| event(i, &[(0, "abandonment")], vec![])).collect();
        let trace = Trace {
            header: header(&g, vec![Some(1), Some(1)]),
            events,
        };
        let v = monitor_trace(&trace).unwrap();
        assert!(v
            .iter()
            .any(|v| v.kind == ViolationKind::NoProgressWindow { from: 0 } && v.step == 2));
    }

    #[test]
    fn clean_seduction_counts_as_single_step() {
        let g = generate(Family::Path { n: 2 }, 0).unwrap();
        let mut ev = event(0, &[(0, "seduction")], vec![Change::Beta { node: 0, old: None, new: Some(1) }]);
        ev.draws = vec![Draw::Coin(true), Draw::Pick { of: 1, index: 0 }];
        ev.potential = Some(Potential { good: 0, almost_good: 1 });
        let trace = Trace {
            header: header(&g, vec![None, None]),
            events: vec![ev],
        };
        let a = analyze_trace(&trace).unwrap();
        assert!(a.violations.is_empty(), "{:?}", a.violations);
        assert_eq!(a.single_steps, IncreaseTally { trials: 1, increases: 1 });
    }

    #[test]
    fn malformed_traces_are_errors() {
        let g = generate(Family::Path { n: 2 }, 0).unwrap();
        let trace = Trace {
            header: header(&g, vec![None, None]),
            events: vec![event(0, &[(9, "seduction")], vec![])],
        };
        assert!(monitor_trace(&trace).is_err());
        let trace = Trace {
            header: header(&g, vec![None, None]),
            events: vec![event(0, &[(0, "dance")], vec![])],
        };
        assert!(monitor_trace(&trace).is_err());
    }
}
