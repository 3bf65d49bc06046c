//! Per-step training records, trailing-window statistics and CSV export.
//!
//! CSV schemas (header row included, columns in this order):
//!
//! - `rewards.csv`: `iteration,grid,reward`
//! - `trades.csv`: `step,seller,buyer,qty,price` (`grid` marks the central grid)
//! - `adl_hist.csv`: `grid,job,outcome,step,count`; outcome is `completed`
//!   or `expired`, step is when the job ran or expired
//! - `price_hist.csv`: `grid,step,price,count`; price is `none` when the
//!   microgrid did not sell at that step

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::market::Trade;
use crate::{Energy, GridId, Price};

/// What one microgrid did in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRecord {
    pub reward: f64,
    pub t: usize,
    pub quantity: Energy,
    /// Quoted sell price; only meaningful when `quantity > 0`.
    pub price: Price,
    pub completed: u32,
    pub expired: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TradeRecord {
    pub step: u64,
    pub trade: Trade,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub grid_names: Vec<String>,
    pub steps_per_day: usize,
    pub jobs: usize,
    pub min_price: Price,
    pub max_price: Price,
    pub window: usize,
    /// Iteration-major: entry `i * n_grids + g`.
    records: Vec<GridRecord>,
    pub trades: Vec<TradeRecord>,
}

/// ADL outcomes over the final window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdlHistogram {
    /// `completed[job][step]`
    pub completed: Vec<Vec<u64>>,
    /// `expired[job][step]`
    pub expired: Vec<Vec<u64>>,
}

impl AdlHistogram {
    pub fn total(&self) -> u64 {
        self.completed.iter().chain(&self.expired).flatten().sum()
    }

    /// Completions per step of the day, summed over jobs.
    pub fn completions_by_step(&self) -> Vec<u64> {
        let steps = self.completed.first().map_or(0, Vec::len);
        (0..steps)
            .map(|t| self.completed.iter().map(|row| row[t]).sum())
            .collect()
    }

    /// True when completions happen at more than one step of the day.
    pub fn is_spread(&self) -> bool {
        self.completions_by_step().iter().filter(|&&c| c > 0).count() > 1
    }
}

/// Quoted sell prices over the final window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceHistogram {
    pub prices: Vec<Price>,
    /// `counts[step][price index]`
    pub counts: Vec<Vec<u64>>,
    /// Steps with no sell order, by step of the day.
    pub no_offer: Vec<u64>,
}

impl PriceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.no_offer.iter().sum::<u64>()
    }

    pub fn by_price(&self) -> Vec<(Price, u64)> {
        self.prices
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, self.counts.iter().map(|row| row[i]).sum()))
            .collect()
    }

    /// Most frequently quoted price; ties go to the lower price.
    pub fn modal_price(&self) -> Option<Price> {
        self.by_price()
            .into_iter()
            .filter(|&(_, c)| c > 0)
            .fold(None, |best: Option<(Price, u64)>, (p, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            })
            .map(|(p, _)| p)
    }
}

impl MetricsLog {
    pub fn new(
        grid_names: Vec<String>,
        steps_per_day: usize,
        jobs: usize,
        min_price: Price,
        max_price: Price,
        window: usize,
    ) -> Self {
        Self {
            grid_names,
            steps_per_day,
            jobs,
            min_price,
            max_price,
            window,
            records: Vec::new(),
            trades: Vec::new(),
        }
    }

    pub fn n_grids(&self) -> usize {
        self.grid_names.len()
    }

    pub fn iterations(&self) -> usize {
        if self.n_grids() == 0 {
            0
        } else {
            self.records.len() / self.n_grids()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push_step(&mut self, grids: impl IntoIterator<Item = GridRecord>) {
        let before = self.records.len();
        self.records.extend(grids);
        debug_assert_eq!(self.records.len() - before, self.n_grids());
    }

    pub fn push_trades(&mut self, step: u64, trades: &[Trade]) {
        self.trades
            .extend(trades.iter().map(|&trade| TradeRecord { step, trade }));
    }

    pub fn record(&self, iteration: usize, grid: GridId) -> &GridRecord {
        &self.records[iteration * self.n_grids() + grid]
    }

    pub fn rewards(&self, grid: GridId) -> impl Iterator<Item = f64> + '_ {
        self.records
            .iter()
            .skip(grid)
            .step_by(self.n_grids().max(1))
            .map(|r| r.reward)
    }

    /// Mean reward of `grid` over the `window` iterations ending before `end`
    /// (fewer if the run is shorter).
    pub fn window_mean(&self, grid: GridId, end: usize) -> f64 {
        let start = end.saturating_sub(self.window);
        let n = end - start;
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = (start..end).map(|i| self.record(i, grid).reward).sum();
        sum / n as f64
    }

    pub fn final_window_mean(&self, grid: GridId) -> f64 {
        self.window_mean(grid, self.iterations())
    }

    /// `(iteration, trailing mean)` every `stride` iterations.
    pub fn smoothed_curve(&self, grid: GridId, stride: usize) -> Vec<(usize, f64)> {
        let stride = stride.max(1);
        (1..=self.iterations() / stride)
            .map(|k| k * stride)
            .map(|end| (end, self.window_mean(grid, end)))
            .collect()
    }

    fn final_window(&self) -> std::ops::Range<usize> {
        let n = self.iterations();
        n.saturating_sub(self.window)..n
    }

    pub fn adl_histogram(&self, grid: GridId) -> AdlHistogram {
        let mut h = AdlHistogram {
            completed: vec![vec![0; self.steps_per_day]; self.jobs],
            expired: vec![vec![0; self.steps_per_day]; self.jobs],
        };
        for i in self.final_window() {
            let r = self.record(i, grid);
            for j in 0..self.jobs {
                if r.completed >> j & 1 == 1 {
                    h.completed[j][r.t] += 1;
                }
                if r.expired >> j & 1 == 1 {
                    h.expired[j][r.t] += 1;
                }
            }
        }
        h
    }

    pub fn price_histogram(&self, grid: GridId) -> PriceHistogram {
        let prices: Vec<Price> = (self.min_price..=self.max_price).collect();
        let mut h = PriceHistogram {
            counts: vec![vec![0; prices.len()]; self.steps_per_day],
            no_offer: vec![0; self.steps_per_day],
            prices,
        };
        for i in self.final_window() {
            let r = self.record(i, grid);
            if r.quantity > 0 {
                h.counts[r.t][(r.price - self.min_price) as usize] += 1;
            } else {
                h.no_offer[r.t] += 1;
            }
        }
        h
    }

    pub fn write_rewards_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iteration,grid,reward")?;
        for (k, r) in self.records.iter().enumerate() {
            writeln!(w, "{},{},{}", k / self.n_grids(), k % self.n_grids(), r.reward)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trades_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,seller,buyer,qty,price")?;
        for r in &self.trades {
            let t = r.trade;
            writeln!(w, "{},{},{},{},{}", r.step, t.seller, t.buyer, t.quantity, t.price)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_adl_hist_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "grid,job,outcome,step,count")?;
        for g in 0..self.n_grids() {
            let h = self.adl_histogram(g);
            for j in 0..self.jobs {
                for (outcome, rows) in [("completed", &h.completed), ("expired", &h.expired)] {
                    for (t, c) in rows[j].iter().enumerate() {
                        writeln!(w, "{g},{j},{outcome},{t},{c}")?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_price_hist_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "grid,step,price,count")?;
        for g in 0..self.n_grids() {
            let h = self.price_histogram(g);
            for t in 0..self.steps_per_day {
                for (i, p) in h.prices.iter().enumerate() {
                    writeln!(w, "{g},{t},{p},{}", h.counts[t][i])?;
                }
                writeln!(w, "{g},{t},none,{}", h.no_offer[t])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes all four CSVs into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        self.write_rewards_csv(&dir.join("rewards.csv"))?;
        self.write_trades_csv(&dir.join("trades.csv"))?;
        self.write_adl_hist_csv(&dir.join("adl_hist.csv"))?;
        self.write_price_hist_csv(&dir.join("price_hist.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(rewards: &[[f64; 2]]) -> MetricsLog {
        let mut log = MetricsLog::new(vec!["a".into(), "b".into()], 4, 2, 15, 20, 3);
        for (i, pair) in rewards.iter().enumerate() {
            log.push_step(pair.iter().enumerate().map(|(g, &reward)| GridRecord {
                reward,
                t: i % 4,
                quantity: if g == 0 { 2 } else { -1 },
                price: 15 + (i % 6) as Price,
                completed: if i % 4 == g { 0b01 } else { 0 },
                expired: if i % 4 == 3 && g == 1 { 0b10 } else { 0 },
            }));
        }
        log
    }

    #[test]
    fn window_mean_is_mean_of_last_rewards() {
        let log = log_with(&[[1.0, 0.0], [2.0, 0.0], [4.0, 0.0], [8.0, 1.0]]);
        assert_eq!(log.final_window_mean(0), (2.0 + 4.0 + 8.0) / 3.0);
        assert_eq!(log.window_mean(0, 2), 1.5);
        assert_eq!(log.final_window_mean(1), 1.0 / 3.0);
        assert_eq!(log.smoothed_curve(0, 2), vec![(2, 1.5), (4, 14.0 / 3.0)]);
        assert_eq!(log.rewards(0).collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);
    }

    #[test]
    fn histograms_cover_window() {
        let log = log_with(&[[0.0; 2]; 8]);
        let p = log.price_histogram(0);
        assert_eq!(p.total(), 3);
        let q = log.price_histogram(1);
        assert_eq!(q.no_offer.iter().sum::<u64>(), 3);
        assert_eq!(q.modal_price(), None);
        // Window is iterations 5..8 with t = 1, 2, 3 and prices 20, 15, 16.
        assert_eq!(p.modal_price(), Some(15));
        let a = log.adl_histogram(1);
        assert_eq!(a.completed[0][1], 1);
        assert_eq!(a.expired[1][3], 1);
        assert_eq!(a.total(), 2);
    }

    #[test]
    fn empty_log() {
        let log = MetricsLog::new(vec!["a".into()], 4, 3, 15, 20, 10);
        assert!(log.is_empty());
        assert_eq!(log.iterations(), 0);
        assert_eq!(log.final_window_mean(0), 0.0);
        assert!(log.smoothed_curve(0, 5).is_empty());
    }
}
