//! Exact model of a one-microgrid environment with a single ADL job and
//! constant pricing, written out directly so it shares no code with the
//! simulator. Used to get optimal values by value iteration and to score
//! any deterministic policy by its long-run average reward.
//!
//! With one grid every sale goes to the central grid at `gp - k` and every
//! purchase comes from it at `gp`.

#[derive(Debug, Clone)]
pub struct Model {
    pub steps: usize,
    pub battery_cap: i64,
    pub trade_cap: i64,
    pub renewable_cap: i64,
    pub means: Vec<f64>,
    pub demands: Vec<i64>,
    pub job: i64,
    pub gp: i64,
    pub k: i64,
    pub k1: f64,
}

/// Start-of-step situation of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Situation {
    pub t: usize,
    pub renewable: i64,
    pub battery: i64,
    pub demand: i64,
    pub job_pending: bool,
}

/// Run the job now, and trade `u` (positive sells).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub run_job: bool,
    pub u: i64,
}

/// Part of the state carried between steps; `(renewable, demand)` are
/// redrawn every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Carry {
    pub t: usize,
    pub battery: i64,
    pub job_pending: bool,
}

fn poisson_pmf(mean: f64, cap: i64) -> Vec<f64> {
    let mut p = vec![0.0; cap as usize + 1];
    let mut term = (-mean).exp();
    let mut acc = 0.0;
    for (n, slot) in p.iter_mut().enumerate().take(cap as usize) {
        if n > 0 {
            term *= mean / n as f64;
        }
        *slot = term;
        acc += term;
    }
    p[cap as usize] = 1.0 - acc;
    p
}

impl Model {
    pub fn carries(&self) -> Vec<Carry> {
        let mut v = Vec::new();
        for t in 0..self.steps {
            for battery in 0..=self.battery_cap {
                for job_pending in [true, false] {
                    if t == 0 && !job_pending {
                        continue;
                    }
                    v.push(Carry { t, battery, job_pending });
                }
            }
        }
        v
    }

    /// `(situation, probability)` for everything that can follow `c`.
    pub fn situations(&self, c: Carry) -> Vec<(Situation, f64)> {
        let pmf = poisson_pmf(self.means[c.t], self.renewable_cap);
        let pd = 1.0 / self.demands.len() as f64;
        let mut v = Vec::new();
        for (re, &pr) in pmf.iter().enumerate() {
            for &d in &self.demands {
                v.push((
                    Situation {
                        t: c.t,
                        renewable: re as i64,
                        battery: c.battery,
                        demand: d,
                        job_pending: c.job_pending,
                    },
                    pr * pd,
                ));
            }
        }
        v
    }

    pub fn choices(&self, s: Situation) -> Vec<Choice> {
        let on_hand = s.renewable + s.battery;
        let mut v = Vec::new();
        for run_job in [false, true] {
            if run_job && !(s.job_pending && self.job <= on_hand) {
                continue;
            }
            let used = if run_job { self.job } else { 0 };
            let surplus = on_hand - s.demand - used;
            // Keep at most a full battery; never sell energy needed for the job.
            let lo = (-self.trade_cap).max(surplus - self.battery_cap);
            let hi = self.trade_cap.min(on_hand - used);
            for u in lo..=hi {
                v.push(Choice { run_job, u });
            }
        }
        v
    }

    /// Reward and the carried state after `c` in `s`.
    pub fn outcome(&self, s: Situation, c: Choice) -> (f64, Carry) {
        let used = if c.run_job { self.job } else { 0 };
        let surplus = s.renewable + s.battery - s.demand - used;
        let cash = if c.u > 0 {
            c.u * (self.gp - self.k)
        } else {
            c.u * self.gp
        };
        let short = (c.u - surplus).clamp(0, s.demand);
        let pending = s.job_pending && !c.run_job;
        let last = s.t + 1 == self.steps;
        let missed = if last && pending { self.job } else { 0 };
        let reward = cash as f64 - self.k1 * (short + missed) as f64;
        let battery = (surplus - c.u).max(0);
        let next = if last {
            Carry { t: 0, battery, job_pending: true }
        } else {
            Carry { t: s.t + 1, battery, job_pending: pending }
        };
        (reward, next)
    }

    fn index(&self, c: Carry) -> usize {
        self.carries().iter().position(|&x| x == c).expect("known carry")
    }

    /// Discounted optimal values of every carry.
    pub fn value_iteration(&self, gamma: f64) -> Vec<f64> {
        let carries = self.carries();
        let mut v = vec![0.0; carries.len()];
        loop {
            let mut next = vec![0.0; carries.len()];
            for (i, &c) in carries.iter().enumerate() {
                next[i] = self
                    .situations(c)
                    .into_iter()
                    .map(|(s, p)| {
                        p * self
                            .choices(s)
                            .into_iter()
                            .map(|ch| {
                                let (r, n) = self.outcome(s, ch);
                                r + gamma * v[self.index(n)]
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum::<f64>();
            }
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-10 {
                return v;
            }
        }
    }

    /// Greedy choice with respect to `values`.
    pub fn greedy(&self, values: &[f64], gamma: f64, s: Situation) -> Choice {
        let mut best = None;
        let mut best_q = f64::NEG_INFINITY;
        for ch in self.choices(s) {
            let (r, n) = self.outcome(s, ch);
            let q = r + gamma * values[self.index(n)];
            if q > best_q + 1e-12 {
                best_q = q;
                best = Some(ch);
            }
        }
        best.expect("some choice is always admissible")
    }

    /// Long-run mean reward per step of a deterministic policy.
    pub fn average_reward(&self, mut policy: impl FnMut(Situation) -> Choice) -> f64 {
        let carries = self.carries();
        let n = carries.len();
        let mut trans = vec![vec![0.0; n]; n];
        let mut reward = vec![0.0; n];
        for (i, &c) in carries.iter().enumerate() {
            for (s, p) in self.situations(c) {
                let ch = policy(s);
                assert!(self.choices(s).contains(&ch), "policy chose {ch:?} in {s:?}");
                let (r, next) = self.outcome(s, ch);
                reward[i] += p * r;
                trans[i][self.index(next)] += p;
            }
        }
        // Power iteration on the step-t=0 start distribution; averaging over
        // a whole day removes the periodicity of the day cycle.
        let mut dist = vec![0.0; n];
        dist[self.index(Carry { t: 0, battery: 0, job_pending: true })] = 1.0;
        for _ in 0..20_000 * self.steps {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += dist[i] * trans[i][j];
                }
            }
            dist = next;
        }
        let mut total = 0.0;
        for _ in 0..self.steps {
            total += dist.iter().zip(&reward).map(|(d, r)| d * r).sum::<f64>();
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += dist[i] * trans[i][j];
                }
            }
            dist = next;
        }
        total / self.steps as f64
    }
}

