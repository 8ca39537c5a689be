//! Self-stabilizing maximal matching on anonymous networks.
//!
//! A randomized matching algorithm under the state model, a link-naming
//! algorithm under the link-register model, their composition, daemon
//! schedulers, trace monitors and an exhaustive model checker.

pub mod composed;
pub mod daemon;
pub mod engine;
pub mod harness;
pub mod linkname;
pub mod matching;
pub mod rng;
pub mod topology;
pub mod trace;
pub mod verifier;
