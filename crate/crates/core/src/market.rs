//! Order clearing between microgrids.
//!
//! Sellers quote a price, buyers take whatever in-band price is offered.
//! The lowest-priced outstanding seller leads: its quantity is shared among
//! the outstanding buyers in proportion to what they still need. Leaders
//! are replaced until one side runs out. The central grid then sells any
//! unmet demand at `gp` and buys any unsold supply at `gp - k`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::{Energy, GridId, Price};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offer {
    pub grid: GridId,
    pub quantity: Energy,
    pub price: Price,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bid {
    pub grid: GridId,
    pub quantity: Energy,
}

/// Either side of a settled trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Microgrid(GridId),
    CentralGrid,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Microgrid(id) => write!(f, "{id}"),
            Party::CentralGrid => f.write_str("grid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Trade {
    pub seller: Party,
    pub buyer: Party,
    pub quantity: Energy,
    pub price: Price,
}

impl Trade {
    pub fn value(&self) -> i64 {
        self.quantity * self.price
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClearingResult {
    /// Signed like the submitted trade quantity: positive for sellers.
    pub settled_energy: Vec<Energy>,
    /// Cash received (positive) or paid (negative) by each microgrid.
    pub cash_flow: Vec<i64>,
    pub grid_absorbed: Energy,
    pub grid_supplied: Energy,
    pub trades: Vec<Trade>,
}

impl ClearingResult {
    fn empty(n_grids: usize) -> Self {
        Self {
            settled_energy: vec![0; n_grids],
            cash_flow: vec![0; n_grids],
            ..Self::default()
        }
    }

    fn record(&mut self, trade: Trade) {
        if let Party::Microgrid(s) = trade.seller {
            self.settled_energy[s] += trade.quantity;
            self.cash_flow[s] += trade.value();
        } else {
            self.grid_supplied += trade.quantity;
        }
        if let Party::Microgrid(b) = trade.buyer {
            self.settled_energy[b] -= trade.quantity;
            self.cash_flow[b] -= trade.value();
        } else {
            self.grid_absorbed += trade.quantity;
        }
        self.trades.push(trade);
    }
}

fn validate(n_grids: usize, offers: &[Offer], bids: &[Bid], min_price: Price, max_price: Price) -> Result<()> {
    let reject = |grid, reason: String| Err(Error::OrderRejected { grid, reason });
    let mut seen = vec![false; n_grids];
    let sides = offers
        .iter()
        .map(|o| (o.grid, o.quantity, Some(o.price)))
        .chain(bids.iter().map(|b| (b.grid, b.quantity, None)));
    for (grid, quantity, price) in sides {
        if grid >= n_grids {
            return reject(grid, format!("unknown grid (have {n_grids})"));
        }
        if std::mem::replace(&mut seen[grid], true) {
            return reject(grid, "more than one order".into());
        }
        if quantity <= 0 {
            return reject(grid, format!("non-positive quantity {quantity}"));
        }
        if let Some(p) = price {
            if !(min_price..=max_price).contains(&p) {
                return reject(grid, format!("price {p} outside [{min_price}, {max_price}]"));
            }
        }
    }
    Ok(())
}

/// Settles every order, using the central grid as backstop.
///
/// Ties between equally priced sellers are broken uniformly at random among
/// the tied sellers taken in grid-id order; `rng` is only consumed when a
/// tie occurs.
pub fn clear<R: Rng + ?Sized>(
    n_grids: usize,
    offers: &[Offer],
    bids: &[Bid],
    grid_price: Price,
    price_margin: Price,
    rng: &mut R,
) -> Result<ClearingResult> {
    let floor_price = grid_price - price_margin;
    validate(n_grids, offers, bids, floor_price, grid_price)?;
    let mut result = ClearingResult::empty(n_grids);

    let mut sellers: Vec<Offer> = offers.to_vec();
    sellers.sort_by_key(|o| o.grid);
    let mut buyers: Vec<(GridId, Energy)> = bids.iter().map(|b| (b.grid, b.quantity)).collect();
    buyers.sort_by_key(|&(g, _)| g);

    while !sellers.is_empty() && !buyers.is_empty() {
        let best = sellers.iter().map(|o| o.price).min().expect("nonempty");
        let tied: Vec<usize> = (0..sellers.len()).filter(|&i| sellers[i].price == best).collect();
        let leader = if tied.len() > 1 {
            tied[rng.random_range(0..tied.len())]
        } else {
            tied[0]
        };
        let Offer { grid, quantity, price } = sellers[leader];

        let shares = allocate_proportional(quantity, &buyers);
        let mut sold = 0;
        for ((buyer, need), (_, share)) in buyers.iter_mut().zip(&shares) {
            if *share > 0 {
                result.record(Trade {
                    seller: Party::Microgrid(grid),
                    buyer: Party::Microgrid(*buyer),
                    quantity: *share,
                    price,
                });
                *need -= share;
                sold += share;
            }
        }
        buyers.retain(|&(_, need)| need > 0);
        if sold == quantity {
            sellers.remove(leader);
        } else {
            // Every bid is filled; the residue waits for the grid below.
            sellers[leader].quantity -= sold;
        }
    }

    for offer in &sellers {
        result.record(Trade {
            seller: Party::Microgrid(offer.grid),
            buyer: Party::CentralGrid,
            quantity: offer.quantity,
            price: floor_price,
        });
    }
    for &(grid, need) in &buyers {
        result.record(Trade {
            seller: Party::CentralGrid,
            buyer: Party::Microgrid(grid),
            quantity: need,
            price: grid_price,
        });
    }
    Ok(result)
}

/// Splits `supply` among `demands` in proportion to each quantity using the
/// largest-remainder rule.
///
/// The total allocated is `min(supply, sum of demands)`. Leftover units go
/// to the largest fractional parts; ties prefer the larger demand, then the
/// lower grid id. Output order follows the input order.
pub fn allocate_proportional(supply: Energy, demands: &[(GridId, Energy)]) -> Vec<(GridId, Energy)> {
    let total: Energy = demands.iter().map(|&(_, d)| d).sum();
    if supply >= total {
        return demands.to_vec();
    }
    // Quota i is supply * d_i / total; work in integers over the common denominator.
    let mut alloc: Vec<(GridId, Energy)> = demands
        .iter()
        .map(|&(g, d)| (g, supply * d / total))
        .collect();
    let assigned: Energy = alloc.iter().map(|&(_, a)| a).sum();
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| {
        let rem = |i: usize| (supply * demands[i].1) % total;
        rem(b)
            .cmp(&rem(a))
            .then(demands[b].1.cmp(&demands[a].1))
            .then(demands[a].0.cmp(&demands[b].0))
    });
    for &i in order.iter().take((supply - assigned) as usize) {
        alloc[i].1 += 1;
    }
    alloc
}

/// Cash per unit settled by `grid`, or `None` if it settled nothing.
pub fn effective_price(result: &ClearingResult, grid: GridId) -> Option<f64> {
    let settled = result.settled_energy[grid];
    (settled != 0).then(|| result.cash_flow[grid] as f64 / settled as f64)
}
