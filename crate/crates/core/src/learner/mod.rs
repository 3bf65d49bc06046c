//! Q-learning machinery: networks, replay, exploration and the TD update.

mod dqn;
mod network;
mod policy;
mod replay;

pub use dqn::{compute_targets, train_step, Transition};
pub use network::{Dense, Gradients, QNetwork};
pub use policy::{select_epsilon_greedy, ActionMask, EpsilonSchedule};
pub use replay::ReplayBuffer;

pub(crate) use network::{read_u32, read_u64};
