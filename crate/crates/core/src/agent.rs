//! One microgrid's decision-maker: an ADL network that picks which jobs to
//! run, feeding an ET network that picks the trade quantity and price.
//! Both learn from the same reward.

use std::io::{Read, Write};

use rand::Rng;

use crate::config::{et_action_count, LearnerConfig, PricingMode};
use crate::env::{adl_energy, trade_bounds, EnvParams, MicrogridState, TradeBounds, TradeDecision};
use crate::error::{Error, Result};
use crate::learner::{
    compute_targets, read_u32, read_u64, select_epsilon_greedy, train_step, ActionMask, QNetwork,
    ReplayBuffer, Transition,
};
use crate::{Energy, GridId, Price};

/// Index layout of the ET network's outputs.
///
/// Indices `0..=M` are the non-selling quantities `u = index - M` (price is
/// irrelevant there and collapsed to one entry). The remaining
/// `M * (k + 1)` indices enumerate `(u, p)` with `u` in `1..=M` and `p` in
/// `gp - k ..= gp`, price varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtActionSpace {
    pub trade_cap: Energy,
    pub min_price: Price,
    pub max_price: Price,
}

impl EtActionSpace {
    pub fn new(env: &EnvParams) -> Self {
        Self {
            trade_cap: env.trade_cap,
            min_price: env.min_price(),
            max_price: env.grid_price,
        }
    }

    fn prices(&self) -> i64 {
        self.max_price - self.min_price + 1
    }

    pub fn len(&self) -> usize {
        (self.trade_cap + 1 + self.trade_cap * self.prices()) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, decision: TradeDecision) -> usize {
        let m = self.trade_cap;
        if decision.quantity <= 0 {
            (decision.quantity + m) as usize
        } else {
            (m + 1 + (decision.quantity - 1) * self.prices() + decision.price - self.min_price) as usize
        }
    }

    /// Non-selling entries decode with the top price as a placeholder.
    pub fn decode(&self, index: usize) -> TradeDecision {
        let m = self.trade_cap;
        let i = index as i64;
        if i <= m {
            TradeDecision {
                quantity: i - m,
                price: self.max_price,
            }
        } else {
            let j = i - m - 1;
            TradeDecision {
                quantity: j / self.prices() + 1,
                price: self.min_price + j % self.prices(),
            }
        }
    }

    pub fn mask(&self, bounds: TradeBounds, pricing: PricingMode) -> ActionMask {
        let mut mask = ActionMask::empty();
        for u in bounds.lower.max(-self.trade_cap)..=bounds.upper.min(self.trade_cap) {
            if u <= 0 {
                mask.insert(self.index(TradeDecision { quantity: u, price: self.max_price }));
                continue;
            }
            let lowest = match pricing {
                PricingMode::Dynamic => self.min_price,
                PricingMode::Constant => self.max_price,
            };
            for price in lowest..=self.max_price {
                mask.insert(self.index(TradeDecision { quantity: u, price }));
            }
        }
        mask
    }
}

/// Maps observations to network inputs, each scalar scaled to `[0, 1]`.
///
/// ADL input: `t, ne, d, gp`, then one remaining bit and one completed bit
/// per job. ET input: `t, ne, d, gp`, then the chosen ADL subset as bits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    steps_per_day: usize,
    net_min: f64,
    net_span: f64,
    max_demand: f64,
    max_grid_price: f64,
    jobs: usize,
}

const SCALAR_FEATURES: usize = 4;

impl StateEncoder {
    pub fn new(env: &EnvParams) -> Self {
        let net_min = -env.max_demand();
        let net_max = env.renewable_cap + env.battery_cap - env.min_demand();
        Self {
            steps_per_day: env.steps_per_day,
            net_min: net_min as f64,
            net_span: (net_max - net_min).max(1) as f64,
            max_demand: env.max_demand().max(1) as f64,
            max_grid_price: env.grid_price.max(1) as f64,
            jobs: env.adl_jobs.len(),
        }
    }

    pub fn adl_dim(&self) -> usize {
        SCALAR_FEATURES + 2 * self.jobs
    }

    pub fn et_dim(&self) -> usize {
        SCALAR_FEATURES + self.jobs
    }

    fn scalars(&self, s: &MicrogridState, out: &mut Vec<f64>) {
        let t = if self.steps_per_day > 1 {
            s.t as f64 / (self.steps_per_day - 1) as f64
        } else {
            0.0
        };
        out.extend([
            t,
            (s.net_energy as f64 - self.net_min) / self.net_span,
            s.demand as f64 / self.max_demand,
            s.grid_price as f64 / self.max_grid_price,
        ]);
    }

    fn bits(&self, mask: u32, out: &mut Vec<f64>) {
        out.extend((0..self.jobs).map(|j| f64::from((mask >> j) & 1)));
    }

    pub fn adl(&self, s: &MicrogridState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.adl_dim());
        self.scalars(s, &mut v);
        self.bits(s.adl.remaining, &mut v);
        self.bits(s.adl.completed, &mut v);
        v
    }

    pub fn et(&self, s: &MicrogridState, adl_action: u32) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.et_dim());
        self.scalars(s, &mut v);
        self.bits(adl_action, &mut v);
        v
    }
}

/// Subsets of the remaining jobs whose energy fits in what is on hand.
pub fn adl_mask(env: &EnvParams, state: &MicrogridState) -> ActionMask {
    let remaining = state.adl.remaining;
    let available = state.available();
    (0..1usize << env.adl_jobs.len())
        .filter(|&a| {
            let a = a as u32;
            a & !remaining == 0
                && adl_energy(a, remaining, &env.adl_jobs).is_ok_and(|f| f <= available)
        })
        .collect()
}

/// Everything one call to [`MicrogridAgent::act`] decided, plus the
/// encodings needed to build the replay entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAction {
    pub adl_action: u32,
    pub adl_energy: Energy,
    pub bounds: TradeBounds,
    pub decision: TradeDecision,
    pub et_index: usize,
    pub s_adl: Vec<f64>,
    pub s_et: Vec<f64>,
    pub adl_mask: ActionMask,
    pub et_mask: ActionMask,
}

#[derive(Debug, Clone)]
pub struct MicrogridAgent {
    pub id: GridId,
    pub adl_net: QNetwork,
    pub et_net: QNetwork,
    pub buffer: ReplayBuffer,
    pub pricing: PricingMode,
    env: EnvParams,
    encoder: StateEncoder,
    space: EtActionSpace,
}

impl MicrogridAgent {
    pub fn new<R: Rng + ?Sized>(
        id: GridId,
        env: &EnvParams,
        learner: &LearnerConfig,
        pricing: PricingMode,
        rng: &mut R,
    ) -> Self {
        let encoder = StateEncoder::new(env);
        let space = EtActionSpace::new(env);
        debug_assert_eq!(space.len(), et_action_count(env));
        let adl_net = QNetwork::random(encoder.adl_dim(), learner.hidden, 1 << env.adl_jobs.len(), rng);
        let et_net = QNetwork::random(encoder.et_dim(), learner.hidden, space.len(), rng);
        Self {
            id,
            adl_net,
            et_net,
            buffer: ReplayBuffer::new(learner.replay_capacity),
            pricing,
            env: env.clone(),
            encoder,
            space,
        }
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn action_space(&self) -> &EtActionSpace {
        &self.space
    }

    pub fn adl_mask(&self, state: &MicrogridState) -> ActionMask {
        adl_mask(&self.env, state)
    }

    /// ADL choice first, then the trade conditioned on it.
    pub fn act<R: Rng + ?Sized>(&self, state: &MicrogridState, epsilon: f64, rng: &mut R) -> Result<AgentAction> {
        let s_adl = self.encoder.adl(state);
        let adl_mask = self.adl_mask(state);
        let q_adl = self.adl_net.forward(&s_adl)?;
        let adl_action = select_epsilon_greedy(&q_adl, &adl_mask, epsilon, rng)? as u32;
        let adl_energy = adl_energy(adl_action, state.adl.remaining, &self.env.adl_jobs)?;
        let bounds = trade_bounds(
            state.net_energy,
            state.demand,
            adl_energy,
            self.env.trade_cap,
            self.env.battery_cap,
        )?;

        let s_et = self.encoder.et(state, adl_action);
        let et_mask = self.space.mask(bounds, self.pricing);
        let q_et = self.et_net.forward(&s_et)?;
        let et_index = select_epsilon_greedy(&q_et, &et_mask, epsilon, rng)?;
        Ok(AgentAction {
            adl_action,
            adl_energy,
            bounds,
            decision: self.space.decode(et_index),
            et_index,
            s_adl,
            s_et,
            adl_mask,
            et_mask,
        })
    }

    pub fn observe(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    /// One TD update of each network from a single shared minibatch.
    /// Returns `(adl_loss, et_loss)`.
    pub fn learn<R: Rng + ?Sized>(
        &mut self,
        gamma: f64,
        learning_rate: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        let batch = self.buffer.sample(rng, batch_size)?;
        let (phi, psi) = compute_targets(&batch, gamma, &self.adl_net, &self.et_net)?;
        let s_adl: Vec<&[f64]> = batch.iter().map(|t| t.s_adl.as_slice()).collect();
        let s_et: Vec<&[f64]> = batch.iter().map(|t| t.s_et.as_slice()).collect();
        let a_adl: Vec<usize> = batch.iter().map(|t| t.adl_action).collect();
        let a_et: Vec<usize> = batch.iter().map(|t| t.et_action).collect();
        let adl_loss = train_step(&mut self.adl_net, &s_adl, &a_adl, &phi, learning_rate)
            .map_err(|e| self.tag(e, "ADL"))?;
        let et_loss = train_step(&mut self.et_net, &s_et, &a_et, &psi, learning_rate)
            .map_err(|e| self.tag(e, "ET"))?;
        Ok((adl_loss, et_loss))
    }

    fn tag(&self, e: Error, net: &str) -> Error {
        match e {
            Error::Divergence(msg) => Error::Divergence(format!("grid {} {net} network: {msg}", self.id)),
            other => other,
        }
    }

    const MAGIC: &'static [u8; 4] = b"MGAG";
    const VERSION: u32 = 1;

    /// Saves both networks and the schedule position. The replay buffer is
    /// not part of a checkpoint.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W, iteration: u64) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.id as u64).to_le_bytes())?;
        w.write_all(&iteration.to_le_bytes())?;
        w.write_all(&[matches!(self.pricing, PricingMode::Constant) as u8])?;
        self.adl_net.write_to(w)?;
        self.et_net.write_to(w)
    }

    /// Restores networks and pricing mode from a checkpoint; returns the
    /// saved iteration.
    pub fn load_checkpoint<R: Read>(&mut self, r: &mut R) -> Result<u64> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let version = read_u32(r)?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported agent version {version}")));
        }
        let id = read_u64(r)?;
        let iteration = read_u64(r)?;
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode)?;
        let adl_net = QNetwork::read_from(r)?;
        let et_net = QNetwork::read_from(r)?;
        let same_shape = |a: &QNetwork, b: &QNetwork| {
            (a.input_dim(), a.output_dim()) == (b.input_dim(), b.output_dim())
        };
        if !same_shape(&adl_net, &self.adl_net) || !same_shape(&et_net, &self.et_net) {
            return Err(Error::Checkpoint(format!(
                "checkpoint for grid {id} does not match this setup's network shapes"
            )));
        }
        self.adl_net = adl_net;
        self.et_net = et_net;
        self.pricing = if mode[0] == 1 {
            PricingMode::Constant
        } else {
            PricingMode::Dynamic
        };
        Ok(iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::AdlStatus;
    use crate::rng;

    fn env() -> EnvParams {
        EnvParams::default()
    }

    #[test]
    fn action_space_round_trip_and_size() {
        let space = EtActionSpace::new(&env());
        assert_eq!(space.len(), 11 + 60);
        for i in 0..space.len() {
            assert_eq!(space.index(space.decode(i)), i);
        }
        assert_eq!(space.decode(0).quantity, -10);
        assert_eq!(space.decode(10).quantity, 0);
        assert_eq!(space.decode(11), TradeDecision { quantity: 1, price: 15 });
        assert_eq!(space.decode(70), TradeDecision { quantity: 10, price: 20 });
    }

    #[test]
    fn masks_respect_bounds_and_pricing() {
        let space = EtActionSpace::new(&env());
        let bounds = TradeBounds { lower: -2, upper: 3 };
        let dynamic = space.mask(bounds, PricingMode::Dynamic);
        assert_eq!(dynamic.len(), 3 + 3 * 6);
        let constant = space.mask(bounds, PricingMode::Constant);
        assert_eq!(constant.len(), 3 + 3);
        for i in constant.iter() {
            let d = space.decode(i);
            assert!(bounds.contains(d.quantity));
            assert!(d.quantity <= 0 || d.price == 20);
        }
    }

    #[test]
    fn adl_mask_admits_only_affordable_remaining_subsets() {
        let e = env();
        // re + b = 3: at most one 2-unit job.
        let s = MicrogridState::new(0, 2, 1, 4, AdlStatus { remaining: 0b011, ..Default::default() }, 20);
        let mask = adl_mask(&e, &s);
        assert_eq!(mask.iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        let none = MicrogridState::new(0, 9, 0, 3, AdlStatus::default(), 20);
        assert_eq!(adl_mask(&e, &none).iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn no_remaining_jobs_forces_empty_adl_action() {
        let e = env();
        let agent = MicrogridAgent::new(0, &e, &LearnerConfig::default(), PricingMode::Dynamic, &mut rng::stream(1, 1));
        let s = MicrogridState::new(2, 5, 3, 4, AdlStatus { remaining: 0, completed: 0b111, expired: 0 }, 20);
        let mut r = rng::stream(2, 2);
        for _ in 0..200 {
            let a = agent.act(&s, 0.5, &mut r).unwrap();
            assert_eq!(a.adl_action, 0);
            assert!(a.bounds.contains(a.decision.quantity));
            assert_eq!((a.bounds.lower, a.bounds.upper), (-6, 8));
        }
    }

    #[test]
    fn constant_pricing_sells_at_grid_price() {
        let e = env();
        let agent = MicrogridAgent::new(0, &e, &LearnerConfig::default(), PricingMode::Constant, &mut rng::stream(1, 1));
        let s = MicrogridState::new(1, 10, 6, 3, AdlStatus::start_of_day(&e.adl_jobs, 0), 20);
        let mut r = rng::stream(3, 3);
        let mut sells = 0;
        for _ in 0..500 {
            let a = agent.act(&s, 1.0, &mut r).unwrap();
            if a.decision.quantity > 0 {
                sells += 1;
                assert_eq!(a.decision.price, 20);
            }
        }
        assert!(sells > 0);
    }

    #[test]
    fn greedy_act_is_repeatable() {
        let e = env();
        let agent = MicrogridAgent::new(0, &e, &LearnerConfig::default(), PricingMode::Dynamic, &mut rng::stream(1, 1));
        let s = MicrogridState::new(1, 7, 2, 5, AdlStatus::start_of_day(&e.adl_jobs, 0), 20);
        let a = agent.act(&s, 0.0, &mut rng::stream(4, 0)).unwrap();
        let b = agent.act(&s, 0.0, &mut rng::stream(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    fn transition(reward: f64, agent: &MicrogridAgent) -> Transition {
        let enc = agent.encoder();
        Transition {
            s_adl: vec![0.3; enc.adl_dim()],
            s_et: vec![0.6; enc.et_dim()],
            adl_action: 0,
            et_action: 10,
            reward,
            next_s_adl: vec![0.2; enc.adl_dim()],
            next_s_et: vec![0.4; enc.et_dim()],
            next_adl_mask: ActionMask(1),
            next_et_mask: ActionMask(1 << 10),
        }
    }

    #[test]
    fn observe_then_sample_round_trips() {
        let e = env();
        let cfg = LearnerConfig { replay_capacity: 3, ..LearnerConfig::default() };
        let mut agent = MicrogridAgent::new(0, &e, &cfg, PricingMode::Dynamic, &mut rng::stream(1, 1));
        let t = transition(7.0, &agent);
        agent.observe(t.clone());
        assert_eq!(agent.buffer.sample(&mut rng::stream(0, 0), 1).unwrap()[0], &t);
        for r in 0..3 {
            agent.observe(transition(r as f64, &agent));
        }
        assert!(agent.buffer.iter().all(|x| x.reward != 7.0));
    }

    #[test]
    fn learn_zero_nets_zero_rewards_gives_zero_loss() {
        let e = env();
        let cfg = LearnerConfig::default();
        let mut agent = MicrogridAgent::new(0, &e, &cfg, PricingMode::Dynamic, &mut rng::stream(1, 1));
        agent.adl_net = QNetwork::zeros(agent.adl_net.input_dim(), 8, agent.adl_net.output_dim());
        agent.et_net = QNetwork::zeros(agent.et_net.input_dim(), 8, agent.et_net.output_dim());
        assert!(matches!(agent.learn(0.9, 1e-3, 4, &mut rng::stream(0, 0)), Err(Error::NotReady { .. })));
        for _ in 0..8 {
            agent.observe(transition(0.0, &agent));
        }
        let (a, b) = agent.learn(0.9, 1e-3, 4, &mut rng::stream(0, 0)).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn shared_reward_reaches_both_targets() {
        let e = env();
        let agent = MicrogridAgent::new(0, &e, &LearnerConfig::default(), PricingMode::Dynamic, &mut rng::stream(1, 1));
        let t = transition(-3.5, &agent);
        let (phi, psi) = compute_targets(&[&t], 0.0, &agent.adl_net, &agent.et_net).unwrap();
        assert_eq!(phi, vec![-3.5]);
        assert_eq!(psi, vec![-3.5]);
    }

    #[test]
    fn identical_agents_learn_identically() {
        let e = env();
        let cfg = LearnerConfig::default();
        let make = || {
            let mut a = MicrogridAgent::new(0, &e, &cfg, PricingMode::Dynamic, &mut rng::stream(9, 9));
            for r in 0..40 {
                a.observe(transition(r as f64 / 10.0, &a));
            }
            a
        };
        let (mut a, mut b) = (make(), make());
        let la = a.learn(0.9, 1e-3, 32, &mut rng::stream(1, 0)).unwrap();
        let lb = b.learn(0.9, 1e-3, 32, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(la, lb);
        assert!(la.0 > 0.0 && la.1 > 0.0);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_forward() {
        let e = env();
        let cfg = LearnerConfig::default();
        let agent = MicrogridAgent::new(2, &e, &cfg, PricingMode::Constant, &mut rng::stream(4, 4));
        let mut buf = Vec::new();
        agent.write_checkpoint(&mut buf, 1234).unwrap();
        let mut other = MicrogridAgent::new(2, &e, &cfg, PricingMode::Dynamic, &mut rng::stream(5, 5));
        assert_eq!(other.load_checkpoint(&mut buf.as_slice()).unwrap(), 1234);
        assert_eq!(other.pricing, PricingMode::Constant);
        let x = vec![0.37; other.encoder().et_dim()];
        let (p, q) = (agent.et_net.forward(&x).unwrap(), other.et_net.forward(&x).unwrap());
        assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
