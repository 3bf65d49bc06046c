//! Multi-agent training loop.
//!
//! One iteration is one environment step: every microgrid acts, orders
//! clear, each grid's battery, ADL bookkeeping and reward are settled, the
//! environment advances, and every agent takes one learning step once its
//! replay buffer is warm.

use rayon::prelude::*;

use crate::agent::{AgentAction, MicrogridAgent};
use crate::config::{PricingMode, SetupConfig};
use crate::env::{
    battery_update, reward, sample_demand, sample_renewable, unfulfilled_demand, AdlStatus,
    MicrogridState,
};
use crate::error::{Error, Result};
use crate::learner::{ActionMask, EpsilonSchedule, Transition};
use crate::market::{self, Bid, ClearingResult, Offer};
use crate::metrics::{GridRecord, MetricsLog};
use crate::rng::{self, SimRng};
use crate::{Energy, GridId};

/// How agents choose actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Epsilon-greedy on the learned networks, with learning enabled.
    Learning,
    /// Uniform over admissible actions; networks are never updated.
    UniformRandom,
    /// Greedy on the current networks; networks are never updated.
    Greedy,
}

/// Settlement of one microgrid for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub state: MicrogridState,
    pub adl_action: u32,
    pub adl_energy: Energy,
    pub expired: u32,
    pub expired_energy: Energy,
    pub quantity: Energy,
    pub price: crate::Price,
    pub unmet_demand: Energy,
    pub battery_next: Energy,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iteration: u64,
    pub epsilon: f64,
    pub grids: Vec<GridStep>,
    pub clearing: ClearingResult,
}

impl StepOutcome {
    pub fn rewards(&self) -> Vec<f64> {
        self.grids.iter().map(|g| g.reward).collect()
    }
}

/// Half of a replay entry, completed once the next ADL choice is known.
#[derive(Debug, Clone)]
struct Pending {
    s_adl: Vec<f64>,
    s_et: Vec<f64>,
    adl_action: usize,
    et_action: usize,
    reward: f64,
    next_s_adl: Vec<f64>,
    next_adl_mask: ActionMask,
}

pub struct Simulation {
    config: SetupConfig,
    agents: Vec<MicrogridAgent>,
    states: Vec<MicrogridState>,
    env_rng: SimRng,
    market_rng: SimRng,
    agent_rngs: Vec<SimRng>,
    pending: Vec<Option<Pending>>,
    schedule: EpsilonSchedule,
    policy: Policy,
    iteration: u64,
}

impl Simulation {
    pub fn new(config: &SetupConfig, seed: u64) -> Result<Self> {
        Self::with_policy(config, seed, Policy::Learning)
    }

    pub fn with_policy(config: &SetupConfig, seed: u64, policy: Policy) -> Result<Self> {
        config.validate()?;
        let env = &config.env;
        let mut agent_rngs: Vec<SimRng> = (0..config.grids.len())
            .map(|g| rng::agent_stream(seed, g))
            .collect();
        let agents = config
            .grids
            .iter()
            .enumerate()
            .map(|(g, spec)| MicrogridAgent::new(g, env, &config.learner, spec.pricing, &mut agent_rngs[g]))
            .collect();
        let mut env_rng = rng::stream(seed, rng::ENV_STREAM);
        let states = config
            .grids
            .iter()
            .map(|spec| {
                let re = sample_renewable(spec.renewable_means[0], env.renewable_cap, &mut env_rng);
                let d = sample_demand(&env.demand_support, &mut env_rng);
                MicrogridState::new(0, re, 0, d, AdlStatus::start_of_day(&env.adl_jobs, 0), env.grid_price_at(0))
            })
            .collect();
        Ok(Self {
            schedule: config.learner.schedule(config.training.iterations)?,
            config: config.clone(),
            agents,
            states,
            env_rng,
            market_rng: rng::stream(seed, rng::MARKET_STREAM),
            agent_rngs,
            pending: vec![None; config.grids.len()],
            policy,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &SetupConfig {
        &self.config
    }

    pub fn agents(&self) -> &[MicrogridAgent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [MicrogridAgent] {
        &mut self.agents
    }

    pub fn states(&self) -> &[MicrogridState] {
        &self.states
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn epsilon(&self) -> f64 {
        match self.policy {
            Policy::Learning => self.schedule.value(self.iteration),
            Policy::UniformRandom => 1.0,
            Policy::Greedy => 0.0,
        }
    }

    pub fn new_metrics(&self) -> MetricsLog {
        let env = &self.config.env;
        MetricsLog::new(
            self.config.grids.iter().map(|g| g.name.clone()).collect(),
            env.steps_per_day,
            env.adl_jobs.len(),
            env.min_price(),
            env.grid_price,
            self.config.training.window,
        )
    }

    /// One iteration: act, settle, advance, and (when learning) update.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let epsilon = self.epsilon();
        let outcome = self.run_step(epsilon)?;
        if self.policy == Policy::Learning {
            self.learn()?;
        }
        self.iteration += 1;
        Ok(outcome)
    }

    /// Steps until `iterations` have run in total, recording into `metrics`.
    pub fn run(&mut self, iterations: u64, metrics: &mut MetricsLog) -> Result<()> {
        while self.iteration < iterations {
            let out = self.step()?;
            record(metrics, &out, self.config.training.record_trades);
        }
        Ok(())
    }

    fn learn(&mut self) -> Result<()> {
        let l = &self.config.learner;
        for (agent, rng) in self.agents.iter_mut().zip(&mut self.agent_rngs) {
            if agent.buffer.len() >= l.warmup() {
                agent
                    .learn(l.gamma, l.learning_rate, l.batch_size, rng)
                    .map_err(|e| match e {
                        Error::Divergence(msg) => {
                            Error::Divergence(format!("iteration {}: {msg}", self.iteration))
                        }
                        other => other,
                    })?;
            }
        }
        Ok(())
    }

    /// Acts and settles one step with exploration rate `epsilon`, without
    /// any learning update.
    pub fn run_step(&mut self, epsilon: f64) -> Result<StepOutcome> {
        let env = self.config.env.clone();
        let n = self.agents.len();

        let actions: Vec<AgentAction> = self
            .agents
            .iter()
            .zip(&self.states)
            .zip(&mut self.agent_rngs)
            .map(|((agent, state), rng)| agent.act(state, epsilon, rng))
            .collect::<Result<_>>()?;

        for (g, action) in actions.iter().enumerate() {
            self.check_action(g, action)?;
            if let Some(p) = self.pending[g].take() {
                self.agents[g].observe(Transition {
                    s_adl: p.s_adl,
                    s_et: p.s_et,
                    adl_action: p.adl_action,
                    et_action: p.et_action,
                    reward: p.reward,
                    next_s_adl: p.next_s_adl,
                    next_s_et: action.s_et.clone(),
                    next_adl_mask: p.next_adl_mask,
                    next_et_mask: action.et_mask,
                });
            }
        }

        let mut offers = Vec::new();
        let mut bids = Vec::new();
        for (g, a) in actions.iter().enumerate() {
            let u = a.decision.quantity;
            if u > 0 {
                offers.push(Offer { grid: g, quantity: u, price: a.decision.price });
            } else if u < 0 {
                bids.push(Bid { grid: g, quantity: -u });
            }
        }
        let clearing = market::clear(n, &offers, &bids, env.grid_price, env.price_margin, &mut self.market_rng)?;
        if self.config.training.debug_asserts {
            check_conservation(&clearing, env.grid_price, env.min_price())?;
        }

        let mut grids = Vec::with_capacity(n);
        for (g, a) in actions.iter().enumerate() {
            let state = self.states[g];
            let u = a.decision.quantity;
            if clearing.settled_energy[g] != u {
                return Err(Error::ConstraintViolation {
                    grid: g,
                    detail: format!("settled {} but ordered {u}", clearing.settled_energy[g]),
                });
            }
            let unmet = unfulfilled_demand(state.net_energy, u, a.adl_energy, state.demand);
            let mut adl = state.adl;
            adl.complete(a.adl_action);
            let expired = adl.expire(&env.adl_jobs, env.steps_per_day, state.t);
            let expired_energy: Energy = env
                .adl_jobs
                .iter()
                .enumerate()
                .filter(|(j, _)| expired >> j & 1 == 1)
                .map(|(_, job)| job.energy)
                .sum();
            let price = market::effective_price(&clearing, g).unwrap_or(0.0);
            let r = reward(u, price, unmet, expired_energy, env.penalty_coeff);
            let battery_next = battery_update(state.net_energy, u, a.adl_energy, env.battery_cap);
            if !(0..=env.battery_cap).contains(&battery_next) {
                return Err(Error::ConstraintViolation {
                    grid: g,
                    detail: format!("battery {battery_next} outside [0, {}]", env.battery_cap),
                });
            }
            let step = GridStep {
                state: MicrogridState { adl, ..state },
                adl_action: a.adl_action,
                adl_energy: a.adl_energy,
                expired,
                expired_energy,
                quantity: u,
                price: a.decision.price,
                unmet_demand: unmet,
                battery_next,
                reward: r,
            };
            if self.config.training.debug_asserts {
                check_energy_balance(g, &step)?;
            }
            grids.push(step);
        }

        let t_next = (self.states[0].t + 1) % env.steps_per_day;
        for (g, step) in grids.iter().enumerate() {
            let adl = if t_next == 0 {
                AdlStatus::start_of_day(&env.adl_jobs, 0)
            } else {
                let mut adl = step.state.adl;
                adl.release(&env.adl_jobs, t_next);
                adl
            };
            let mean = self.config.grids[g].renewable_means[t_next];
            let re = sample_renewable(mean, env.renewable_cap, &mut self.env_rng);
            let d = sample_demand(&env.demand_support, &mut self.env_rng);
            let next = MicrogridState::new(t_next, re, step.battery_next, d, adl, env.grid_price_at(t_next));

            if self.policy == Policy::Learning {
                let a = &actions[g];
                self.pending[g] = Some(Pending {
                    s_adl: a.s_adl.clone(),
                    s_et: a.s_et.clone(),
                    adl_action: a.adl_action as usize,
                    et_action: a.et_index,
                    reward: step.reward / self.config.learner.reward_scale,
                    next_s_adl: self.agents[g].encoder().adl(&next),
                    next_adl_mask: self.agents[g].adl_mask(&next),
                });
            }
            self.states[g] = next;
        }

        Ok(StepOutcome {
            iteration: self.iteration,
            epsilon,
            grids,
            clearing,
        })
    }

    fn check_action(&self, g: GridId, a: &AgentAction) -> Result<()> {
        let state = &self.states[g];
        let violation = |detail: String| Err(Error::ConstraintViolation { grid: g, detail });
        if a.adl_action & !state.adl.remaining != 0 {
            return violation(format!("ADL action {:#b} not remaining", a.adl_action));
        }
        if a.adl_energy > state.available() {
            return violation(format!("ADL needs {} with {} on hand", a.adl_energy, state.available()));
        }
        if !a.bounds.contains(a.decision.quantity) {
            return violation(format!(
                "trade {} outside [{}, {}]",
                a.decision.quantity, a.bounds.lower, a.bounds.upper
            ));
        }
        let env = &self.config.env;
        if a.decision.quantity > 0 {
            let p = a.decision.price;
            let ok = match self.agents[g].pricing {
                PricingMode::Dynamic => (env.min_price()..=env.grid_price).contains(&p),
                PricingMode::Constant => p == env.grid_price,
            };
            if !ok {
                return violation(format!("sell price {p} not allowed"));
            }
        }
        Ok(())
    }
}

fn record(metrics: &mut MetricsLog, out: &StepOutcome, trades: bool) {
    metrics.push_step(out.grids.iter().map(|g| GridRecord {
        reward: g.reward,
        t: g.state.t,
        quantity: g.quantity,
        price: g.price,
        completed: g.adl_action,
        expired: g.expired,
    }));
    if trades {
        metrics.push_trades(out.iteration, &out.clearing.trades);
    }
}

/// `re + b + bought = served demand + ADL + next battery + sold`.
pub fn check_energy_balance(g: GridId, s: &GridStep) -> Result<()> {
    let u = s.quantity;
    let inflow = s.state.renewable + s.state.battery + (-u).max(0);
    let outflow = (s.state.demand - s.unmet_demand) + s.adl_energy + s.battery_next + u.max(0);
    if inflow != outflow {
        return Err(Error::ConstraintViolation {
            grid: g,
            detail: format!("energy in {inflow} != energy out {outflow}"),
        });
    }
    Ok(())
}

/// Energy and cash identities of one clearing.
pub fn check_conservation(c: &ClearingResult, grid_price: crate::Price, floor_price: crate::Price) -> Result<()> {
    let received: Energy = c.settled_energy.iter().filter(|&&e| e < 0).map(|e| -e).sum();
    let sent: Energy = c.settled_energy.iter().filter(|&&e| e > 0).sum();
    if received + c.grid_absorbed != sent + c.grid_supplied {
        return Err(Error::ConstraintViolation {
            grid: usize::MAX,
            detail: format!(
                "energy: received {received} + absorbed {} != sent {sent} + supplied {}",
                c.grid_absorbed, c.grid_supplied
            ),
        });
    }
    let cash: i64 = c.cash_flow.iter().sum();
    let expected = c.grid_absorbed * floor_price - c.grid_supplied * grid_price;
    if cash != expected {
        return Err(Error::ConstraintViolation {
            grid: usize::MAX,
            detail: format!("cash: microgrids net {cash}, central grid implies {expected}"),
        });
    }
    Ok(())
}

/// Trains every grid of `config` for `config.training.iterations` steps.
pub fn run_training(config: &SetupConfig, seed: u64) -> Result<MetricsLog> {
    run_with_policy(config, seed, Policy::Learning)
}

pub fn run_with_policy(config: &SetupConfig, seed: u64, policy: Policy) -> Result<MetricsLog> {
    let mut sim = Simulation::with_policy(config, seed, policy)?;
    let mut metrics = sim.new_metrics();
    sim.run(config.training.iterations, &mut metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub grid: GridId,
    pub name: String,
    pub dpp_reward: f64,
    pub cpp_reward: f64,
}

impl ComparisonRow {
    pub fn difference(&self) -> f64 {
        self.dpp_reward - self.cpp_reward
    }

    pub fn winner(&self) -> PricingMode {
        if self.difference() > 0.0 {
            PricingMode::Dynamic
        } else {
            PricingMode::Constant
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn dpp_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.winner() == PricingMode::Dynamic).count()
    }

    pub fn dpp_at_least_cpp(&self) -> usize {
        self.rows.iter().filter(|r| r.difference() >= 0.0).count()
    }

    pub fn mean_difference(&self) -> f64 {
        self.rows.iter().map(ComparisonRow::difference).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,dpp_reward,cpp_reward,difference,winner\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                r.grid,
                r.dpp_reward,
                r.cpp_reward,
                r.difference(),
                r.winner().label()
            ));
        }
        out
    }
}

/// Runs the all-dynamic and all-constant variants of `config` for every
/// seed and averages each grid's final-window reward across seeds.
pub fn compare_policies(config: &SetupConfig, seeds: &[u64]) -> Result<ComparisonTable> {
    compare_variants(&config.with_pricing(PricingMode::Dynamic), &config.with_pricing(PricingMode::Constant), seeds)
}

/// Like [`compare_policies`] with explicit variant configs.
pub fn compare_variants(dpp: &SetupConfig, cpp: &SetupConfig, seeds: &[u64]) -> Result<ComparisonTable> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    if dpp.grids.len() != cpp.grids.len() {
        return Err(Error::config("grids", "variants differ in grid count"));
    }
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, true), (s, false)]).collect();
    let finals: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(seed, dynamic)| {
            let cfg = if dynamic { dpp } else { cpp };
            let log = run_training(cfg, seed)?;
            Ok((0..log.n_grids()).map(|g| log.final_window_mean(g)).collect())
        })
        .collect::<Result<_>>()?;

    let n = seeds.len() as f64;
    let rows = dpp
        .grids
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let mean = |dynamic: bool| {
                jobs.iter()
                    .zip(&finals)
                    .filter(|((_, d), _)| *d == dynamic)
                    .map(|(_, f)| f[g])
                    .sum::<f64>()
                    / n
            };
            ComparisonRow {
                grid: g,
                name: spec.name.clone(),
                dpp_reward: mean(true),
                cpp_reward: mean(false),
            }
        })
        .collect();
    Ok(ComparisonTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn tiny(name: &str, iterations: u64) -> SetupConfig {
        let mut c = preset(name).unwrap();
        c.training.iterations = iterations;
        c.training.window = 20;
        c.training.debug_asserts = true;
        c.learner.hidden = 8;
        c.learner.batch_size = 4;
        c
    }

    #[test]
    fn zero_iterations_give_empty_log() {
        let log = run_training(&tiny("setup1", 0), 1).unwrap();
        assert!(log.is_empty());
        assert!(log.trades.is_empty());
    }

    #[test]
    fn same_seed_same_log() {
        let c = tiny("setup1", 300);
        assert_eq!(run_training(&c, 7).unwrap(), run_training(&c, 7).unwrap());
        assert_ne!(run_training(&c, 7).unwrap(), run_training(&c, 8).unwrap());
    }

    #[test]
    fn no_trade_step_rewards_are_penalties_only() {
        let c = tiny("setup1", 0);
        let mut sim = Simulation::new(&c, 3).unwrap();
        for a in sim.agents_mut() {
            // Make "u = 0" the greedy choice everywhere.
            let mut params = a.et_net.params();
            let n = params.len();
            let out = a.et_net.output_dim();
            params[n - out + c.env.trade_cap as usize] = 1e6;
            a.et_net.set_params(&params).unwrap();
        }
        let mut idle = 0;
        for _ in 0..40 {
            let out = sim.run_step(0.0).unwrap();
            for g in out.grids.iter().filter(|g| g.quantity == 0) {
                let penalty = c.env.penalty_coeff * (g.unmet_demand + g.expired_energy) as f64;
                assert_eq!(g.reward, -penalty);
                idle += 1;
            }
        }
        assert!(idle > 0);
    }

    #[test]
    fn bilateral_settlement() {
        let clearing = market::clear(
            2,
            &[Offer { grid: 0, quantity: 4, price: 17 }],
            &[Bid { grid: 1, quantity: 4 }],
            20,
            5,
            &mut rng::stream(0, 1),
        )
        .unwrap();
        assert_eq!(reward(4, market::effective_price(&clearing, 0).unwrap(), 0, 0, 30.0), 68.0);
        assert_eq!(reward(-4, market::effective_price(&clearing, 1).unwrap(), 0, 0, 30.0), -68.0);
    }

    #[test]
    fn random_rollout_keeps_every_identity() {
        for name in ["setup1", "setup2", "setup3"] {
            let mut c = tiny(name, 0);
            c.training.debug_asserts = true;
            let mut sim = Simulation::with_policy(&c, 11, Policy::UniformRandom).unwrap();
            for _ in 0..2_000 {
                sim.step().unwrap();
            }
        }
    }

    #[test]
    fn identical_variants_compare_to_zero() {
        let c = tiny("setup1", 120);
        let t = compare_variants(&c, &c, &[1]).unwrap();
        assert!(t.rows.iter().all(|r| r.difference() == 0.0));
        assert!(t.rows.iter().all(|r| r.winner() == PricingMode::Constant));
        assert!(t.to_csv().starts_with("grid,dpp_reward,cpp_reward,difference,winner\n"));
    }
}
