//! Named random streams split from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Daemon = 1,
    Rules = 2,
    Faults = 3,
    /// Second daemon, used by the matching layer of composed runs.
    DaemonUpper = 4,
}

/// Independent stream `which` of the master seed. Streams never overlap, so
/// changing the daemon policy does not perturb rule draws.
pub fn stream(master: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(which as u64);
    rng
}
