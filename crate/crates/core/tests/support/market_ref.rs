//! Brute-force settlement used as a reference for `market::clear`.
//!
//! Sellers are served cheapest first. Each leader's supply is split by
//! searching every integer allocation for the one closest (in squared error)
//! to the exact proportional shares. Among equally close allocations the one
//! favouring larger bids, then lower grid ids, wins.

use microgrid_core::market::{Party, Trade};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefResult {
    pub settled: Vec<i64>,
    pub cash: Vec<i64>,
    pub absorbed: i64,
    pub supplied: i64,
    pub trades: Vec<(Party, Party, i64, i64)>,
}

/// All vectors `a` with `0 <= a[i] <= cap[i]` and `sum(a) == total`.
fn allocations(cap: &[i64], total: i64) -> Vec<Vec<i64>> {
    if cap.is_empty() {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=cap[0].min(total) {
        for mut rest in allocations(&cap[1..], total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Split of `supply` among `(grid, demand)` bids.
pub fn split(supply: i64, bids: &[(usize, i64)]) -> Vec<i64> {
    let demand: i64 = bids.iter().map(|b| b.1).sum();
    let give = supply.min(demand);
    let caps: Vec<i64> = bids.iter().map(|b| b.1).collect();
    // Preference order for breaking ties: larger demand, then lower id.
    let mut pref: Vec<usize> = (0..bids.len()).collect();
    pref.sort_by_key(|&i| (-bids[i].1, bids[i].0));

    let error = |a: &[i64]| -> i128 {
        a.iter()
            .zip(bids)
            .map(|(&x, &(_, d))| {
                let diff = (x * demand - give * d) as i128;
                diff * diff
            })
            .sum()
    };
    allocations(&caps, give)
        .into_iter()
        .min_by(|a, b| {
            error(a).cmp(&error(b)).then_with(|| {
                let ka: Vec<i64> = pref.iter().map(|&i| a[i]).collect();
                let kb: Vec<i64> = pref.iter().map(|&i| b[i]).collect();
                kb.cmp(&ka)
            })
        })
        .expect("at least one allocation")
}

/// `offers` are `(grid, qty, price)`, `bids` are `(grid, qty)`.
pub fn settle<R: Rng>(
    n: usize,
    offers: &[(usize, i64, i64)],
    bids: &[(usize, i64)],
    gp: i64,
    k: i64,
    rng: &mut R,
) -> RefResult {
    let mut sellers: Vec<(usize, i64, i64)> = offers.to_vec();
    sellers.sort();
    let mut buyers: Vec<(usize, i64)> = bids.to_vec();
    buyers.sort();
    let mut trades = Vec::new();

    while !sellers.is_empty() && buyers.iter().any(|b| b.1 > 0) {
        let low = sellers.iter().map(|s| s.2).min().unwrap();
        let at_low: Vec<usize> = (0..sellers.len()).filter(|&i| sellers[i].2 == low).collect();
        let pick = if at_low.len() == 1 {
            at_low[0]
        } else {
            at_low[rng.random_range(0..at_low.len())]
        };
        let (seller, qty, price) = sellers[pick];
        let open: Vec<(usize, i64)> = buyers.iter().copied().filter(|b| b.1 > 0).collect();
        let shares = split(qty, &open);
        let mut sold = 0;
        for (&(buyer, _), &share) in open.iter().zip(&shares) {
            if share == 0 {
                continue;
            }
            trades.push((Party::Microgrid(seller), Party::Microgrid(buyer), share, price));
            buyers.iter_mut().find(|b| b.0 == buyer).unwrap().1 -= share;
            sold += share;
        }
        if sold == qty {
            sellers.remove(pick);
        } else {
            sellers[pick].1 -= sold;
        }
    }
    for &(seller, qty, _) in &sellers {
        trades.push((Party::Microgrid(seller), Party::CentralGrid, qty, gp - k));
    }
    for &(buyer, qty) in buyers.iter().filter(|b| b.1 > 0) {
        trades.push((Party::CentralGrid, Party::Microgrid(buyer), qty, gp));
    }

    let mut r = RefResult {
        settled: vec![0; n],
        cash: vec![0; n],
        absorbed: 0,
        supplied: 0,
        trades: Vec::new(),
    };
    for &(s, b, q, p) in &trades {
        match s {
            Party::Microgrid(g) => {
                r.settled[g] += q;
                r.cash[g] += q * p;
            }
            Party::CentralGrid => r.supplied += q,
        }
        match b {
            Party::Microgrid(g) => {
                r.settled[g] -= q;
                r.cash[g] -= q * p;
            }
            Party::CentralGrid => r.absorbed += q,
        }
    }
    trades.sort_by_key(|t| (key(t.0), key(t.1), t.2, t.3));
    r.trades = trades;
    r
}

pub fn key(p: Party) -> usize {
    match p {
        Party::Microgrid(g) => g,
        Party::CentralGrid => usize::MAX,
    }
}

pub fn sorted_trades(trades: &[Trade]) -> Vec<(Party, Party, i64, i64)> {
    let mut v: Vec<_> = trades.iter().map(|t| (t.seller, t.buyer, t.quantity, t.price)).collect();
    v.sort_by_key(|t| (key(t.0), key(t.1), t.2, t.3));
    v
}
