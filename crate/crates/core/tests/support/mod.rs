#![allow(dead_code)]

pub mod market_ref;
pub mod tabular;

use microgrid_core::config::{preset, SetupConfig};

/// A preset shrunk for quick tests.
pub fn small(name: &str, iterations: u64) -> SetupConfig {
    let mut c = preset(name).expect("preset");
    c.training.iterations = iterations;
    c.training.window = 50;
    c.training.debug_asserts = true;
    c.learner.hidden = 16;
    c.learner.batch_size = 8;
    c
}
