use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::matrix::{is_missing, Matrix};

use super::BacktestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub top_k: usize,
    pub n_drop: usize,
    pub buy_cost: f64,
    pub sell_cost: f64,
    pub annualization: u32,
    /// Sell everything after the last day, paying `sell_cost` on it.
    pub liquidate_at_end: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig { top_k: 50, n_drop: 5, buy_cost: 0.0005, sell_cost: 0.0015, annualization: 252, liquidate_at_end: false }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::Invalid(m));
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.n_drop > self.top_k {
            return bad(format!("n_drop {} exceeds top_k {}", self.n_drop, self.top_k));
        }
        for (name, c) in [("buy_cost", self.buy_cost), ("sell_cost", self.sell_cost)] {
            if !(0.0..=0.1).contains(&c) {
                return bad(format!("{name} {c} outside [0, 0.1]"));
            }
        }
        if self.annualization == 0 {
            return bad("annualization must be positive".into());
        }
        Ok(())
    }
}

/// Day-by-day outcome of a Topk-Dropout run. `equity` has one more entry than
/// the daily series; it starts at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub equity: Vec<f64>,
    pub portfolio_returns: Vec<f64>,
    pub benchmark_returns: Vec<f64>,
    pub excess_returns: Vec<f64>,
    pub turnover: Vec<f64>,
    pub costs: Vec<f64>,
    pub holdings: Vec<Vec<usize>>,
    /// Fewer than `top_k` instruments could be held on the first day.
    pub short_universe: bool,
}

/// Held names are ranked by current score; a missing score ranks lowest.
fn by_score_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| {
        let (x, y) = (scores[*a], scores[*b]);
        match (is_missing(x), is_missing(y)) {
            (true, true) => a.cmp(b),
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => y.partial_cmp(&x).unwrap_or(Ordering::Equal).then(a.cmp(b)),
        }
    }
}

/// Long-only equal-weight Topk-Dropout over the dates in `rows`, trading on
/// each date's scores and earning that date's forward return. Dates whose
/// forward returns are all missing end the simulation.
pub fn simulate_topk(scores: &Matrix, returns: &Matrix, rows: Range<usize>, config: &StrategyConfig) -> Simulation {
    let mut sim = Simulation {
        equity: vec![1.0],
        portfolio_returns: Vec::new(),
        benchmark_returns: Vec::new(),
        excess_returns: Vec::new(),
        turnover: Vec::new(),
        costs: Vec::new(),
        holdings: Vec::new(),
        short_universe: false,
    };
    let mut held: Vec<usize> = Vec::new();
    let mut forced: Vec<usize> = Vec::new();
    for t in rows {
        let r = returns.row(t);
        let universe: Vec<f64> = r.iter().copied().filter(|v| !is_missing(*v)).collect();
        if universe.is_empty() {
            break;
        }
        let s = scores.row(t);
        let mut ranked: Vec<usize> = (0..s.len()).filter(|&i| !is_missing(s[i])).collect();
        ranked.sort_by(by_score_desc(s));

        let first = sim.holdings.is_empty();
        let (bought, sold, prev_len) = if first {
            held = ranked.iter().copied().take(config.top_k).collect();
            sim.short_universe = held.len() < config.top_k;
            (held.len(), 0, 0)
        } else {
            let prev_len = held.len();
            let mut keep = held.clone();
            keep.sort_by(by_score_desc(s));
            let mut dropped: Vec<usize> = keep.iter().copied().filter(|i| forced.contains(i)).collect();
            keep.retain(|i| !forced.contains(i));
            // only drop what can be replaced today
            let fresh_pool = ranked.iter().filter(|i| !held.contains(i)).count();
            while dropped.len() < config.n_drop.min(fresh_pool.max(dropped.len())) {
                match keep.pop() {
                    Some(i) => dropped.push(i),
                    None => break,
                }
            }
            let need = config.top_k.saturating_sub(keep.len());
            let fresh: Vec<usize> =
                ranked.iter().copied().filter(|i| !keep.contains(i) && !dropped.contains(i)).take(need).collect();
            let n_bought = fresh.len();
            keep.extend(fresh);
            held = keep;
            (n_bought, dropped.len(), prev_len)
        };
        held.sort_unstable();

        let bought_frac = if held.is_empty() { 0.0 } else { bought as f64 / held.len() as f64 };
        let sold_frac = if prev_len == 0 { 0.0 } else { sold as f64 / prev_len as f64 };
        let cost = config.buy_cost * bought_frac + config.sell_cost * sold_frac;

        forced = held.iter().copied().filter(|&i| is_missing(r[i])).collect();
        let gross = if held.is_empty() {
            0.0
        } else {
            held.iter().map(|&i| if is_missing(r[i]) { 0.0 } else { r[i] }).sum::<f64>() / held.len() as f64
        };
        let net = gross - cost;
        let bench = universe.iter().sum::<f64>() / universe.len() as f64;
        let last = *sim.equity.last().expect("equity starts non-empty");
        sim.equity.push(last * (1.0 + net));
        sim.portfolio_returns.push(net);
        sim.benchmark_returns.push(bench);
        sim.excess_returns.push(net - bench);
        sim.turnover.push(bought_frac + sold_frac);
        sim.costs.push(cost);
        sim.holdings.push(held.clone());
    }
    if config.liquidate_at_end && !held.is_empty() && !sim.holdings.is_empty() {
        let last = sim.equity.last_mut().expect("non-empty");
        *last *= 1.0 - config.sell_cost;
        *sim.costs.last_mut().expect("non-empty") += config.sell_cost;
    }
    sim
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(top_k: usize, n_drop: usize, buy: f64, sell: f64) -> StrategyConfig {
        StrategyConfig { top_k, n_drop, buy_cost: buy, sell_cost: sell, ..StrategyConfig::default() }
    }

    #[test]
    fn whole_universe_tracks_benchmark() {
        let scores = Matrix::from_row_vecs(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 0.0]]);
        let rets = Matrix::from_row_vecs(&[vec![0.01, -0.02], vec![0.03, 0.0], vec![-0.01, 0.02]]);
        let sim = simulate_topk(&scores, &rets, 0..3, &cfg(2, 0, 0.0, 0.0));
        assert!(sim.excess_returns.iter().all(|e| e.abs() < 1e-15));
        let mut eq = 1.0;
        for t in 0..3 {
            eq *= 1.0 + (rets.raw(t, 0) + rets.raw(t, 1)) / 2.0;
        }
        assert!((sim.equity[3] - eq).abs() < 1e-15);
    }

    #[test]
    fn round_trip_cost() {
        let scores = Matrix::from_row_vecs(&[vec![1.0]]);
        let rets = Matrix::from_row_vecs(&[vec![0.0]]);
        let c = StrategyConfig { liquidate_at_end: true, ..cfg(1, 0, 0.0005, 0.0015) };
        let sim = simulate_topk(&scores, &rets, 0..1, &c);
        assert!((sim.costs.iter().sum::<f64>() - 0.002).abs() < 1e-12);
        assert!((sim.equity[1] - (1.0 - 0.0005) * (1.0 - 0.0015)).abs() < 1e-12);
    }

    #[test]
    fn three_by_three_by_hand() {
        // k = 2, drop = 1, buy 1%, sell 2%
        let scores = Matrix::from_row_vecs(&[vec![3.0, 2.0, 1.0], vec![1.0, 3.0, 2.0], vec![2.0, 1.0, 3.0]]);
        let rets = Matrix::from_row_vecs(&[vec![0.1, 0.0, -0.1], vec![0.0, 0.2, 0.1], vec![0.05, 0.05, 0.0]]);
        let sim = simulate_topk(&scores, &rets, 0..3, &cfg(2, 1, 0.01, 0.02));
        // day 0: buy {0, 1}; gross 0.05, cost 0.01
        // day 1: drop 0 (score 1), buy 2; gross 0.15, cost 0.005 + 0.01
        // day 2: held {1, 2}, drop 1 (score 1), buy 0; gross 0.025, cost 0.015
        assert_eq!(sim.holdings, [vec![0, 1], vec![1, 2], vec![0, 2]]);
        let expected = [1.0, 1.04, 1.04 * 1.135, 1.04 * 1.135 * 1.01];
        for (a, b) in sim.equity.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{:?}", sim.equity);
        }
        assert_eq!(sim.turnover, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_return_forces_drop() {
        let scores = Matrix::from_row_vecs(&[vec![3.0, 2.0, 1.0], vec![3.0, 2.0, 1.0]]);
        let rets = Matrix::from_row_vecs(&[vec![f64::NAN, 0.1, 0.1], vec![0.0, 0.0, 0.0]]);
        let sim = simulate_topk(&scores, &rets, 0..2, &cfg(2, 0, 0.0, 0.0));
        assert!((sim.portfolio_returns[0] - 0.05).abs() < 1e-15);
        assert_eq!(sim.holdings[1], vec![1, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(StrategyConfig::default().validate().is_ok());
        assert!(cfg(5, 6, 0.0, 0.0).validate().is_err());
        assert!(cfg(5, 1, 0.2, 0.0).validate().is_err());
    }
}
