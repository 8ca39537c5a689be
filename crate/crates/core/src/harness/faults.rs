//! Initial-state corruption.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::matching::MatchingConfiguration;
use crate::linkname::RegisterFile;
use crate::topology::AnonymousGraph;
use crate::trace::{Algorithm, InitialState};

/// Uniform garbage reaches this far past a node's largest valid value.
pub const GARBAGE_MARGIN: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Every node points at its highest-numbered neighbor above it, or failing
    /// that the highest below it. On a path this is one long chain ending in
    /// a good edge. Registers are canonical.
    PointerChain,
    /// Every link and image register holds 1 and every pointer holds 1.
    DuplicateLinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultMode {
    AllNull,
    UniformRandom,
    Preset(Preset),
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultMode::AllNull => "all-null",
            FaultMode::UniformRandom => "random",
            FaultMode::Preset(Preset::PointerChain) => "preset:pointer-chain",
            FaultMode::Preset(Preset::DuplicateLinks) => "preset:duplicate-links",
        })
    }
}

impl FromStr for FaultMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "all-null" | "null" => FaultMode::AllNull,
            "random" | "uniform-random" => FaultMode::UniformRandom,
            "preset:pointer-chain" => FaultMode::Preset(Preset::PointerChain),
            "preset:duplicate-links" => FaultMode::Preset(Preset::DuplicateLinks),
            other => return Err(format!("unknown fault mode {other:?}")),
        })
    }
}

fn pointer_chain(g: &AnonymousGraph) -> Vec<Option<usize>> {
    (0..g.node_count())
        .map(|u| {
            let links = g.links(u);
            let above = links.iter().enumerate().filter(|(_, l)| l.neighbor > u).max_by_key(|(_, l)| l.neighbor);
            let below = links.iter().enumerate().max_by_key(|(_, l)| l.neighbor);
            above.or(below).map(|(i, _)| i)
        })
        .collect()
}

/// The corrupted starting state for `algorithm`. Matching pointers hold ports
/// for the matching algorithm and link names for the composition; both read
/// out-of-range values as null.
pub fn inject_faults(g: &AnonymousGraph, algorithm: Algorithm, mode: FaultMode, rng: &mut impl Rng) -> InitialState {
    let n = g.node_count();
    let (beta, registers) = match mode {
        FaultMode::AllNull => (MatchingConfiguration::all_null(n), RegisterFile::zeroed(g)),
        FaultMode::UniformRandom => {
            let mut regs = RegisterFile::zeroed(g);
            for u in 0..n {
                for (i, l) in g.links(u).iter().enumerate() {
                    regs.link[u][i] = rng.gen_range(0..=g.degree(u) as u64 + GARBAGE_MARGIN);
                    regs.img[u][i] = rng.gen_range(0..=g.degree(l.neighbor) as u64 + GARBAGE_MARGIN);
                }
            }
            let beta = (0..n)
                .map(|u| {
                    let top = g.degree(u) as u64 + GARBAGE_MARGIN;
                    // one extra outcome for null
                    let x = rng.gen_range(0..=top + 1);
                    (x <= top).then_some(x)
                })
                .collect();
            (MatchingConfiguration { beta }, regs)
        }
        FaultMode::Preset(Preset::PointerChain) => {
            let regs = RegisterFile::canonical(g);
            let beta = pointer_chain(g)
                .into_iter()
                .enumerate()
                .map(|(u, idx)| {
                    idx.map(|i| match algorithm {
                        Algorithm::Composed => regs.link[u][i],
                        _ => u64::from(g.links(u)[i].port),
                    })
                })
                .collect();
            (MatchingConfiguration { beta }, regs)
        }
        FaultMode::Preset(Preset::DuplicateLinks) => {
            let shape = RegisterFile::zeroed(g);
            let ones = |v: &Vec<Vec<u64>>| v.iter().map(|r| vec![1; r.len()]).collect();
            let regs = RegisterFile {
                link: ones(&shape.link),
                img: ones(&shape.img),
            };
            (MatchingConfiguration { beta: vec![Some(1); n] }, regs)
        }
    };
    match algorithm {
        Algorithm::A1 => InitialState {
            beta: Some(beta),
            registers: None,
        },
        Algorithm::A2 => InitialState {
            beta: None,
            registers: Some(registers),
        },
        Algorithm::Composed => InitialState {
            beta: Some(beta),
            registers: Some(registers),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::pointer;
    use crate::rng::{stream, Stream};
    use crate::topology::{generate, Family};
    use crate::verifier::potential;

    #[test]
    fn all_null_starts_every_node_single() {
        let g = generate(Family::Ring { n: 5 }, 0).unwrap();
        let s = inject_faults(&g, Algorithm::A1, FaultMode::AllNull, &mut stream(0, Stream::Faults));
        let beta = s.beta.unwrap();
        assert!(beta.beta.iter().all(Option::is_none));
        assert_eq!(potential(&g, &beta), (0, 0).into());
    }

    #[test]
    fn random_garbage_reads_as_null() {
        let g = generate(Family::Star { n: 5 }, 0).unwrap();
        let mut rng = stream(11, Stream::Faults);
        let mut seen_garbage = false;
        for _ in 0..50 {
            let s = inject_faults(&g, Algorithm::Composed, FaultMode::UniformRandom, &mut rng);
            let beta = s.beta.unwrap();
            assert!(s.registers.unwrap().fits(&g));
            for u in 0..5 {
                if let Some(x) = beta.beta[u] {
                    assert!(x <= g.degree(u) as u64 + GARBAGE_MARGIN);
                    if x == 0 || x > g.degree(u) as u64 {
                        seen_garbage = true;
                        assert_eq!(pointer(&g, &beta, u), None);
                    }
                }
            }
        }
        assert!(seen_garbage);
    }

    #[test]
    fn pointer_chain_on_a_path() {
        let g = generate(Family::Path { n: 5 }, 0).unwrap();
        let s = inject_faults(&g, Algorithm::A1, FaultMode::Preset(Preset::PointerChain), &mut stream(0, Stream::Faults));
        let beta = s.beta.unwrap();
        let targets: Vec<Option<usize>> = (0..5)
            .map(|u| pointer(&g, &beta, u).map(|p| g.link(u, p).unwrap().neighbor))
            .collect();
        assert_eq!(targets, vec![Some(1), Some(2), Some(3), Some(4), Some(3)]);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [
            FaultMode::AllNull,
            FaultMode::UniformRandom,
            FaultMode::Preset(Preset::PointerChain),
            FaultMode::Preset(Preset::DuplicateLinks),
        ] {
            assert_eq!(m.to_string().parse::<FaultMode>(), Ok(m));
        }
        assert!("preset:nope".parse::<FaultMode>().is_err());
    }
}
