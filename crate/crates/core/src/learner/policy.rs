use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set of admissible action indices (at most 128 actions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionMask(pub u128);

impl ActionMask {
    pub const CAPACITY: usize = 128;

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, action: usize) {
        debug_assert!(action < Self::CAPACITY);
        self.0 |= 1 << action;
    }

    pub fn contains(&self, action: usize) -> bool {
        action < Self::CAPACITY && self.0 & (1 << action) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            (bits != 0).then(|| {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                i
            })
        })
    }

    /// The `n`th admissible action in increasing index order.
    pub fn nth(&self, n: usize) -> Option<usize> {
        self.iter().nth(n)
    }

    /// Index of the largest `q` among admissible actions; ties go to the
    /// lowest index.
    pub fn argmax(&self, q: &[f64]) -> Option<usize> {
        self.iter()
            .filter(|&a| a < q.len())
            .fold(None, |best: Option<usize>, a| match best {
                Some(b) if q[b] >= q[a] => Some(b),
                _ => Some(a),
            })
    }

    pub fn max_value(&self, q: &[f64]) -> Option<f64> {
        self.argmax(q).map(|a| q[a])
    }
}

impl FromIterator<usize> for ActionMask {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut mask = Self::empty();
        for a in iter {
            mask.insert(a);
        }
        mask
    }
}

/// Linear decay from `start` to `end` over the first `decay_iterations`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_iterations: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, decay_iterations: u64) -> Result<Self> {
        if !(0.0 <= end && end <= start && start <= 1.0) {
            return Err(Error::config(
                "learner.epsilon",
                format!("need 0 <= end <= start <= 1, got start {start}, end {end}"),
            ));
        }
        Ok(Self {
            start,
            end,
            decay_iterations,
        })
    }

    pub fn value(&self, iteration: u64) -> f64 {
        if iteration >= self.decay_iterations {
            return self.end;
        }
        let frac = iteration as f64 / self.decay_iterations as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Uniform over `mask` with probability `epsilon`, otherwise the masked
/// argmax of `q`. Always draws one uniform variate for the coin flip.
pub fn select_epsilon_greedy<R: Rng + ?Sized>(
    q: &[f64],
    mask: &ActionMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let explore = rng.random::<f64>() < epsilon;
    let action = if explore {
        mask.nth(rng.random_range(0..mask.len()))
    } else {
        mask.argmax(q)
    };
    action.ok_or(Error::EmptyMask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn greedy_and_masked_greedy() {
        let mut r = rng::stream(0, 0);
        let q = [1.0, 5.0, 3.0];
        let all: ActionMask = [0, 1, 2].into_iter().collect();
        let some: ActionMask = [0, 2].into_iter().collect();
        assert_eq!(select_epsilon_greedy(&q, &all, 0.0, &mut r).unwrap(), 1);
        assert_eq!(select_epsilon_greedy(&q, &some, 0.0, &mut r).unwrap(), 2);
    }

    #[test]
    fn full_exploration_is_uniform_over_mask() {
        let mut r = rng::stream(1, 0);
        let q = [1.0, 5.0, 3.0];
        let mask: ActionMask = [0, 2].into_iter().collect();
        let n = 100_000;
        let zeros = (0..n)
            .map(|_| select_epsilon_greedy(&q, &mask, 1.0, &mut r).unwrap())
            .inspect(|&a| assert!(a == 0 || a == 2))
            .filter(|&a| a == 0)
            .count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mut r = rng::stream(0, 0);
        assert!(matches!(
            select_epsilon_greedy(&[1.0], &ActionMask::empty(), 0.5, &mut r),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let mask: ActionMask = [1, 3, 4].into_iter().collect();
        assert_eq!(mask.argmax(&[9.0, 2.0, 9.0, 2.0, 1.0]), Some(1));
        assert_eq!(mask.max_value(&[9.0, 2.0, 9.0, 2.0, 1.0]), Some(2.0));
    }

    #[test]
    fn schedule_is_piecewise_linear() {
        let s = EpsilonSchedule::new(1.0, 0.05, 100).unwrap();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(100), 0.05);
        assert_eq!(s.value(10_000), 0.05);
        assert!(EpsilonSchedule::new(0.1, 0.5, 10).is_err());
        assert_eq!(EpsilonSchedule::new(0.3, 0.1, 0).unwrap().value(0), 0.1);
    }
}
