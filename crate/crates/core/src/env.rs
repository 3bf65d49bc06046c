//! Microgrid dynamics.
//!
//! Quantities are integral energy units. A trade quantity `u` is positive
//! when the microgrid sells and negative when it buys.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Energy, Price};

/// Deferrable (ADL) job scheduled at day start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdlJob {
    pub energy: Energy,
    #[serde(default)]
    pub release: usize,
    /// Last step of the day at which the job may still run. Defaults to the
    /// last step of the day.
    #[serde(default)]
    pub deadline: Option<usize>,
}

impl AdlJob {
    pub fn new(energy: Energy) -> Self {
        Self {
            energy,
            release: 0,
            deadline: None,
        }
    }

    pub fn deadline(&self, steps_per_day: usize) -> usize {
        self.deadline.unwrap_or(steps_per_day.saturating_sub(1))
    }
}

/// Physical and economic parameters shared by every microgrid in a setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub steps_per_day: usize,
    pub battery_cap: Energy,
    pub trade_cap: Energy,
    pub renewable_cap: Energy,
    pub grid_price: Price,
    pub price_margin: Price,
    pub penalty_coeff: f64,
    pub demand_support: Vec<Energy>,
    pub adl_jobs: Vec<AdlJob>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            steps_per_day: 4,
            battery_cap: 10,
            trade_cap: 10,
            renewable_cap: 10,
            grid_price: 20,
            price_margin: 5,
            penalty_coeff: 30.0,
            demand_support: vec![3, 4, 5, 6],
            adl_jobs: vec![AdlJob::new(2); 3],
        }
    }
}

/// Largest number of ADL jobs; the ADL action space is every subset.
pub const MAX_ADL_JOBS: usize = 6;

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(self.steps_per_day >= 1, "env.steps_per_day", "must be at least 1")?;
        check(self.battery_cap >= 0, "env.battery_cap", "must be >= 0")?;
        check(self.trade_cap >= 0, "env.trade_cap", "must be >= 0")?;
        check(self.renewable_cap >= 0, "env.renewable_cap", "must be >= 0")?;
        check(self.price_margin >= 0, "env.price_margin", "must be >= 0")?;
        check(
            self.grid_price - self.price_margin >= 0,
            "env.price_margin",
            "grid_price - price_margin must be >= 0",
        )?;
        check(
            self.penalty_coeff >= 0.0 && self.penalty_coeff.is_finite(),
            "env.penalty_coeff",
            "must be finite and >= 0",
        )?;
        check(!self.demand_support.is_empty(), "env.demand_support", "must be nonempty")?;
        check(
            self.demand_support.iter().all(|&d| d >= 0),
            "env.demand_support",
            "demands must be >= 0",
        )?;
        check(
            self.adl_jobs.len() <= MAX_ADL_JOBS,
            "env.adl_jobs",
            "too many jobs for the subset action space",
        )?;
        for (i, job) in self.adl_jobs.iter().enumerate() {
            let field = format!("env.adl_jobs[{i}]");
            check(job.energy >= 1, &field, "energy must be >= 1")?;
            let deadline = job.deadline(self.steps_per_day);
            check(
                job.release <= deadline && deadline < self.steps_per_day,
                &field,
                "need release <= deadline < steps_per_day",
            )?;
        }
        // The battery-cap lower bound must stay below the buy cap, otherwise a
        // full-generation step could leave no admissible trade.
        check(
            self.renewable_cap - self.min_demand() <= self.trade_cap,
            "env.trade_cap",
            "renewable_cap - min(demand_support) must not exceed trade_cap",
        )?;
        Ok(())
    }

    pub fn min_price(&self) -> Price {
        self.grid_price - self.price_margin
    }

    pub fn min_demand(&self) -> Energy {
        self.demand_support.iter().copied().min().unwrap_or(0)
    }

    pub fn max_demand(&self) -> Energy {
        self.demand_support.iter().copied().max().unwrap_or(0)
    }

    pub fn all_jobs_mask(&self) -> u32 {
        (1u32 << self.adl_jobs.len()) - 1
    }

    /// Grid price in effect at step `t` of the day.
    pub fn grid_price_at(&self, _t: usize) -> Price {
        self.grid_price
    }
}

/// Which of the day's ADL jobs are still pending, done, or expired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AdlStatus {
    pub remaining: u32,
    pub completed: u32,
    pub expired: u32,
}

impl AdlStatus {
    /// Status at step `t` of a fresh day.
    pub fn start_of_day(jobs: &[AdlJob], t: usize) -> Self {
        let mut status = Self::default();
        status.release(jobs, t);
        status
    }

    /// Adds every job released at or before `t` that has not been seen yet.
    pub fn release(&mut self, jobs: &[AdlJob], t: usize) {
        for (j, job) in jobs.iter().enumerate() {
            let bit = 1 << j;
            if job.release <= t && (self.completed | self.expired | self.remaining) & bit == 0 {
                self.remaining |= bit;
            }
        }
    }

    pub fn complete(&mut self, action: u32) {
        debug_assert_eq!(action & !self.remaining, 0);
        self.remaining &= !action;
        self.completed |= action;
    }

    /// Moves remaining jobs whose deadline is `t` or earlier to `expired` and
    /// returns their mask.
    pub fn expire(&mut self, jobs: &[AdlJob], steps_per_day: usize, t: usize) -> u32 {
        let mut mask = 0;
        for (j, job) in jobs.iter().enumerate() {
            let bit = 1 << j;
            if self.remaining & bit != 0 && job.deadline(steps_per_day) <= t {
                mask |= bit;
            }
        }
        self.remaining &= !mask;
        self.expired |= mask;
        mask
    }
}

/// One microgrid's observation at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MicrogridState {
    pub t: usize,
    pub renewable: Energy,
    pub battery: Energy,
    pub demand: Energy,
    pub net_energy: Energy,
    pub adl: AdlStatus,
    pub grid_price: Price,
}

impl MicrogridState {
    pub fn new(
        t: usize,
        renewable: Energy,
        battery: Energy,
        demand: Energy,
        adl: AdlStatus,
        grid_price: Price,
    ) -> Self {
        Self {
            t,
            renewable,
            battery,
            demand,
            net_energy: net_energy(renewable, battery, demand),
            adl,
            grid_price,
        }
    }

    /// Energy on hand before trading: renewable plus battery.
    pub fn available(&self) -> Energy {
        self.net_energy + self.demand
    }
}

/// Trade quantity and quoted sell price chosen by the ET agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeDecision {
    pub quantity: Energy,
    pub price: Price,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeBounds {
    pub lower: Energy,
    pub upper: Energy,
}

impl TradeBounds {
    pub fn contains(&self, u: Energy) -> bool {
        self.lower <= u && u <= self.upper
    }

    /// The admissible quantity closest to no trade.
    pub fn closest_to_zero(&self) -> Energy {
        0.clamp(self.lower, self.upper)
    }
}

pub fn net_energy(renewable: Energy, battery: Energy, demand: Energy) -> Energy {
    renewable + battery - demand
}

/// Poisson(`mean`) draw truncated to `[0, cap]`.
pub fn sample_renewable<R: Rng + ?Sized>(mean: f64, cap: Energy, rng: &mut R) -> Energy {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng);
    (draw as Energy).clamp(0, cap)
}

pub fn sample_demand<R: Rng + ?Sized>(support: &[Energy], rng: &mut R) -> Energy {
    support[rng.random_range(0..support.len())]
}

/// Total energy of the jobs in `action`, which must be a subset of `remaining`.
pub fn adl_energy(action: u32, remaining: u32, jobs: &[AdlJob]) -> Result<Energy> {
    if let Some(job) = (0..32).find(|&j| action & (1 << j) != 0 && remaining & (1 << j) == 0) {
        return Err(Error::InvalidAdlAction { action, job });
    }
    Ok(jobs
        .iter()
        .enumerate()
        .filter(|(j, _)| action & (1 << j) != 0)
        .map(|(_, job)| job.energy)
        .sum())
}

/// Admissible trade range given the ADL load `adl` already committed.
///
/// The lower bound keeps the post-trade battery within `battery_cap` and the
/// buy within `trade_cap`; the upper bound keeps enough energy to run the
/// selected jobs.
pub fn trade_bounds(
    net: Energy,
    demand: Energy,
    adl: Energy,
    trade_cap: Energy,
    battery_cap: Energy,
) -> Result<TradeBounds> {
    if adl > net + demand {
        return Err(Error::InfeasibleAction {
            required: adl,
            available: net + demand,
        });
    }
    Ok(TradeBounds {
        lower: (-trade_cap).max(net - adl - battery_cap),
        upper: trade_cap.min(net + demand - adl),
    })
}

/// Non-ADL demand left unserved after trading `u` and running `adl` units of jobs.
pub fn unfulfilled_demand(net: Energy, u: Energy, adl: Energy, demand: Energy) -> Energy {
    (u + adl - net).clamp(0, demand.max(0))
}

pub fn reward(u: Energy, price: f64, unmet_demand: Energy, unmet_adl: Energy, penalty_coeff: f64) -> f64 {
    u as f64 * price - penalty_coeff * unmet_demand as f64 - penalty_coeff * unmet_adl as f64
}

/// Battery level carried into the next step.
pub fn battery_update(net: Energy, u: Energy, adl: Energy, battery_cap: Energy) -> Energy {
    let next = (net - u - adl).max(0);
    debug_assert!(next <= battery_cap, "battery above cap: {next}");
    next
}
