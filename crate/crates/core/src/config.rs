//! Setup files.
//!
//! A setup is a TOML document with four tables: `env` (shared physical and
//! price parameters), `[[grids]]` (one per microgrid), `learner` and
//! `training`. Three presets ship with the crate, see [`preset`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::learner::{ActionMask, EpsilonSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingMode {
    /// Sell price chosen in `[gp - k, gp]`.
    Dynamic,
    /// Sell price pinned to `gp`.
    Constant,
}

impl PricingMode {
    pub fn label(self) -> &'static str {
        match self {
            PricingMode::Dynamic => "DPP",
            PricingMode::Constant => "CPP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub name: String,
    /// Free-form source tag, e.g. `solar` or `wind`.
    pub source: String,
    pub pricing: PricingMode,
    /// Poisson mean of renewable generation for each step of the day.
    pub renewable_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Updates start once the buffer holds this many batches.
    pub warmup_batches: usize,
    /// Rewards are divided by this before entering the replay buffer.
    pub reward_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            replay_capacity: 10_000,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            warmup_batches: 10,
            reward_scale: 100.0,
        }
    }
}

impl LearnerConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_batches * self.batch_size
    }

    pub fn schedule(&self, iterations: u64) -> Result<EpsilonSchedule> {
        let horizon = (iterations as f64 * self.epsilon_decay_fraction).round() as u64;
        EpsilonSchedule::new(self.epsilon_start, self.epsilon_end, horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Environment steps per run.
    pub iterations: u64,
    pub seeds: Vec<u64>,
    /// Trailing window, in steps, for final-reward averages and histograms.
    pub window: usize,
    pub record_trades: bool,
    /// Check energy balance and market conservation on every step.
    pub debug_asserts: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            seeds: vec![1, 2, 3, 4, 5],
            window: 10_000,
            record_trades: true,
            debug_asserts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub env: EnvParams,
    pub grids: Vec<GridSpec>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl SetupConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .and_then(|span| text.get(..span.start))
                .map(|before| format!("line {}", before.lines().count().max(1)))
                .unwrap_or_else(|| "document".into());
            Error::config(field, message)
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::config("config", format!("config not found: {}", path.display()))
            }
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("setup config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.grids.is_empty() {
            return Err(Error::config("grids", "need at least one microgrid"));
        }
        let steps = self.env.steps_per_day;
        for (i, g) in self.grids.iter().enumerate() {
            let field = format!("grids[{i}].renewable_means");
            if g.renewable_means.len() != steps {
                return Err(Error::config(
                    field,
                    format!("expected {steps} values, got {}", g.renewable_means.len()),
                ));
            }
            if g.renewable_means.iter().any(|&m| !(m.is_finite() && m >= 0.0)) {
                return Err(Error::config(field, "means must be finite and >= 0"));
            }
        }
        let et_actions = et_action_count(&self.env);
        if et_actions > ActionMask::CAPACITY {
            return Err(Error::config(
                "env.trade_cap",
                format!("{et_actions} trade actions exceed the limit of {}", ActionMask::CAPACITY),
            ));
        }

        let l = &self.learner;
        let positive = |ok: bool, field: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("learner.{field}"), "must be positive"))
            }
        };
        positive(l.hidden > 0, "hidden")?;
        positive(l.batch_size > 0, "batch_size")?;
        positive(l.replay_capacity >= l.batch_size, "replay_capacity")?;
        positive(l.learning_rate > 0.0 && l.learning_rate.is_finite(), "learning_rate")?;
        positive(l.reward_scale > 0.0 && l.reward_scale.is_finite(), "reward_scale")?;
        if !(0.0..1.0).contains(&l.gamma) {
            return Err(Error::config("learner.gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&l.epsilon_decay_fraction) {
            return Err(Error::config("learner.epsilon_decay_fraction", "must lie in [0, 1]"));
        }
        l.schedule(self.training.iterations)?;
        if self.training.window == 0 {
            return Err(Error::config("training.window", "must be positive"));
        }
        Ok(())
    }

    /// Copy with every grid switched to `mode`.
    pub fn with_pricing(&self, mode: PricingMode) -> Self {
        let mut c = self.clone();
        for g in &mut c.grids {
            g.pricing = mode;
        }
        c
    }
}

pub(crate) fn et_action_count(env: &EnvParams) -> usize {
    let m = env.trade_cap.max(0) as usize;
    let prices = env.price_margin.max(0) as usize + 1;
    m + 1 + m * prices
}

pub const PRESETS: [(&str, &str); 3] = [
    ("setup1", include_str!("../../../configs/setup1.toml")),
    ("setup2", include_str!("../../../configs/setup2.toml")),
    ("setup3", include_str!("../../../configs/setup3.toml")),
];

/// One of the shipped setups by name (`setup1`, `setup2`, `setup3`).
pub fn preset(name: &str) -> Option<SetupConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| SetupConfig::from_toml(text).expect("shipped presets are valid"))
}
