//! Per-agent, per-purpose random streams derived from one master seed.
//!
//! Every stream is a ChaCha8 generator seeded from the master seed and
//! positioned on its own ChaCha stream id:
//!
//! ```text
//! stream_id = (agent as u64) << 8 | purpose as u64
//! ```
//!
//! Adding a new purpose or agent therefore never shifts the numbers any
//! existing consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Init = 0,
    Gradient = 1,
    ActionNoise = 2,
    /// Scenario data generation (targets, covariances); agent index unused.
    ProblemData = 3,
    /// Free-standing Monte-Carlo estimates.
    Estimate = 4,
}

pub fn stream(master_seed: u64, agent: usize, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((agent as u64) << 8) | purpose as u64);
    rng
}
