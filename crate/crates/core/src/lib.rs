//! Multi-agent microgrid energy trading.
//!
//! Each microgrid runs two cooperating deep Q-learners: an ADL agent that
//! schedules deferrable jobs and an energy-trading (ET) agent that picks a
//! trade quantity and a sell price. Orders from all microgrids clear through
//! a lowest-price-first market with proportional sharing among buyers, and
//! the central grid absorbs whatever is left over.
//!
//! Module map:
//!
//! - [`env`]: per-microgrid dynamics, trade bounds, battery, reward
//! - [`market`]: order clearing and settlement
//! - [`learner`]: feed-forward Q-networks, replay, exploration, targets
//! - [`agent`]: the ADL/ET pair acting for one microgrid
//! - [`sim`]: multi-agent training loop, metrics, policy comparison
//! - [`config`]: TOML setup files and shipped presets
//! - [`cli`]: the `microgrid` command-line front end

pub mod agent;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod learner;
pub mod market;
pub mod metrics;
mod plot;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};

/// Energy in integral units.
pub type Energy = i64;

/// Price in integral price units per energy unit.
pub type Price = i64;

/// Index of a microgrid within a setup.
pub type GridId = usize;
