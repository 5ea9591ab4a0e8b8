use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::matrix::{is_missing, Matrix, MISSING};
use crate::stats;

/// Spearman IC per date of `rows`; a date with fewer than two common entries
/// (or a constant side) yields a missing value.
pub fn daily_ic(scores: &Matrix, returns: &Matrix, rows: Range<usize>) -> Vec<f64> {
    let mut xs = Vec::with_capacity(scores.cols());
    let mut ys = Vec::with_capacity(scores.cols());
    rows.map(|t| {
        xs.clear();
        ys.clear();
        for (s, r) in scores.row(t).iter().zip(returns.row(t)) {
            if !is_missing(*s) && !is_missing(*r) {
                xs.push(*s);
                ys.push(*r);
            }
        }
        if xs.len() < 2 {
            return MISSING;
        }
        stats::spearman(&xs, &ys).unwrap_or(MISSING)
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcSummary {
    pub ic: Option<f64>,
    pub icir: Option<f64>,
    pub icir_degenerate: bool,
    pub days: usize,
}

/// Mean IC and mean/std (population) over the non-missing entries.
pub fn summarize_ic(series: &[f64]) -> IcSummary {
    let present: Vec<f64> = series.iter().copied().filter(|v| !is_missing(*v)).collect();
    let days = present.len();
    if days == 0 {
        return IcSummary { ic: None, icir: None, icir_degenerate: false, days };
    }
    let ic = stats::mean(&present);
    if days < 2 {
        return IcSummary { ic: Some(ic), icir: None, icir_degenerate: false, days };
    }
    let sd = stats::std_pop(&present);
    if stats::is_degenerate_spread(sd, ic) {
        return IcSummary { ic: Some(ic), icir: Some(0.0), icir_degenerate: true, days };
    }
    IcSummary { ic: Some(ic), icir: Some(ic / sd), icir_degenerate: false, days }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub ar: f64,
    pub ir: f64,
    pub ir_degenerate: bool,
    pub mdd: f64,
}

/// Largest fractional fall from a running peak, reported as a non-positive
/// number.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        if v > peak {
            peak = v;
        } else if peak > 0.0 {
            worst = worst.max(1.0 - v / peak);
        }
    }
    0.0 - worst
}

/// `None` for an empty excess series.
pub fn ar_ir_mdd(excess: &[f64], equity: &[f64], annualization: u32) -> Option<RiskSummary> {
    if excess.is_empty() {
        return None;
    }
    let a = annualization as f64;
    let mean = stats::mean(excess);
    let ar = mean * a;
    let sd = stats::std_pop(excess);
    let (ir, ir_degenerate) = if stats::is_degenerate_spread(sd, mean) { (0.0, true) } else { (ar / (sd * a.sqrt()), false) };
    Some(RiskSummary { ar, ir, ir_degenerate, mdd: max_drawdown(equity) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ic_examples() {
        let s = Matrix::from_row_vecs(&[vec![1.0, 2.0, 3.0]]);
        let r = Matrix::from_row_vecs(&[vec![0.03, 0.01, 0.02]]);
        // ranks (1,2,3) vs (3,1,2): Pearson of the ranks is -0.5
        assert!((daily_ic(&s, &r, 0..1)[0] + 0.5).abs() < 1e-15);
        assert!((daily_ic(&r, &r, 0..1)[0] - 1.0).abs() < 1e-12);
        assert!((daily_ic(&r.map(|x| -x), &r, 0..1)[0] + 1.0).abs() < 1e-12);
        let sparse = Matrix::from_row_vecs(&[vec![1.0, f64::NAN, f64::NAN]]);
        assert!(daily_ic(&sparse, &r, 0..1)[0].is_nan());
    }

    #[test]
    fn summary_examples() {
        let flat = summarize_ic(&[0.1, 0.1, 0.1]);
        assert!((flat.ic.unwrap() - 0.1).abs() < 1e-15);
        assert!(flat.icir_degenerate);
        assert_eq!(flat.icir, Some(0.0));
        let two = summarize_ic(&[0.2, 0.0]);
        assert!((two.ic.unwrap() - 0.1).abs() < 1e-15);
        assert!((two.icir.unwrap() - 1.0).abs() < 1e-12);
        let empty = summarize_ic(&[]);
        assert_eq!((empty.ic, empty.icir), (None, None));
    }

    #[test]
    fn risk_examples() {
        let excess = vec![0.0004; 30];
        let r = ar_ir_mdd(&excess, &[1.0, 1.1], 252).unwrap();
        assert!((r.ar - 0.1008).abs() < 1e-12);
        assert!(r.ir_degenerate);
        assert_eq!(max_drawdown(&[1.0, 1.2, 0.9, 1.1]), -0.25);
        assert_eq!(max_drawdown(&[1.0, 1.0, 1.3, 2.0]).to_bits(), 0.0f64.to_bits());
        assert!(ar_ir_mdd(&[], &[1.0], 252).is_none());
    }
}
