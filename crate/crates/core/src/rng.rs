//! Seed splitting.
//!
//! Every stochastic component draws from its own ChaCha8 stream. All
//! streams share the run's master seed as key and differ only in the
//! stream number:
//!
//! | stream          | consumer                                   |
//! |-----------------|--------------------------------------------|
//! | 0               | environment sampling (renewables, demand)  |
//! | 1               | market tie-breaks                          |
//! | 1000 + grid id  | agent: weight init, exploration, replay    |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::GridId;

pub type SimRng = ChaCha8Rng;

pub const ENV_STREAM: u64 = 0;
pub const MARKET_STREAM: u64 = 1;
pub const AGENT_STREAM_BASE: u64 = 1000;

pub fn stream(master_seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

pub fn agent_stream(master_seed: u64, grid: GridId) -> SimRng {
    stream(master_seed, AGENT_STREAM_BASE + grid as u64)
}
