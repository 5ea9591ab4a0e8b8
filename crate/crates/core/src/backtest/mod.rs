//! Factor backtests: daily rank IC, Topk-Dropout simulation with costs, and
//! the split-aware engine that keeps the test interval sealed until a final
//! run is requested.

mod metrics;
mod strategy;

use std::fmt::Write as _;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{is_missing, Matrix};
use crate::panel::{forward_returns, Panel, PanelError, ResolvedSplits, ReturnPanel};

pub use metrics::{ar_ir_mdd, daily_ic, max_drawdown, summarize_ic, IcSummary, RiskSummary};
pub use strategy::{simulate_topk, Simulation, StrategyConfig};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error("invalid backtest input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Metric bundle for one split. Series entries are `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub split: Split,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub ic: Option<f64>,
    pub icir: Option<f64>,
    pub icir_degenerate: bool,
    pub ar: Option<f64>,
    pub ir: Option<f64>,
    pub ir_degenerate: bool,
    pub mdd: Option<f64>,
    pub short_universe: bool,
    pub ic_series: Vec<Option<f64>>,
    pub equity_curve: Vec<f64>,
    pub excess_series: Vec<f64>,
    pub turnover_series: Vec<f64>,
}

fn opt(v: f64) -> Option<f64> {
    (!is_missing(v)).then_some(v)
}

impl BacktestReport {
    /// Builds the report for `rows` from scores and one-day forward returns
    /// already clipped to the window.
    pub fn compute(
        split: Split,
        dates: &[NaiveDate],
        scores: &Matrix,
        returns: &Matrix,
        rows: Range<usize>,
        config: &StrategyConfig,
    ) -> BacktestReport {
        let ic_series = daily_ic(scores, returns, rows.clone());
        let ic = summarize_ic(&ic_series);
        let sim = simulate_topk(scores, returns, rows.clone(), config);
        let risk = ar_ir_mdd(&sim.excess_returns, &sim.equity, config.annualization);
        BacktestReport {
            split,
            start: dates[rows.start],
            end: dates[rows.end - 1],
            ic: ic.ic,
            icir: ic.icir,
            icir_degenerate: ic.icir_degenerate,
            ar: risk.map(|r| r.ar),
            ir: risk.map(|r| r.ir),
            ir_degenerate: risk.is_some_and(|r| r.ir_degenerate),
            mdd: risk.map(|r| r.mdd),
            short_universe: sim.short_universe,
            ic_series: ic_series.into_iter().map(opt).collect(),
            equity_curve: sim.equity,
            excess_series: sim.excess_returns,
            turnover_series: sim.turnover,
        }
    }

    /// Copy without the per-date series.
    pub fn scalars_only(&self) -> BacktestReport {
        BacktestReport {
            ic_series: Vec::new(),
            equity_curve: Vec::new(),
            excess_series: Vec::new(),
            turnover_series: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:>10.4}"),
        None => format!("{:>10}", "NA"),
    }
}

/// Fixed-width IC / ICIR / AR / IR / MDD table.
pub fn render_table(rows: &[(&str, &BacktestReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$} {:>10} {:>10} {:>10} {:>10} {:>10}\n", "factor", "IC", "ICIR", "AR", "IR", "MDD");
    for (name, r) in rows {
        let _ = writeln!(out, "{:<width$} {} {} {} {} {}", name, cell(r.ic), cell(r.icir), cell(r.ar), cell(r.ir), cell(r.mdd));
    }
    out
}

/// Holds a panel with resolved splits. Train and validation reports never
/// read a test-interval cell; test reports require the final-run flag.
#[derive(Debug, Clone)]
pub struct BacktestEngine {
    panel: Panel,
    splits: ResolvedSplits,
    strategy: StrategyConfig,
    returns: ReturnPanel,
}

impl BacktestEngine {
    pub fn new(panel: Panel, splits: ResolvedSplits, strategy: StrategyConfig) -> Result<Self> {
        strategy.validate()?;
        for (name, r) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
            if r.len() < 2 {
                return Err(BacktestError::Invalid(format!("{name} split needs at least two dates")));
            }
        }
        let returns = forward_returns(&panel, 1);
        Ok(BacktestEngine { panel, splits, strategy, returns })
    }

    pub fn splits(&self) -> &ResolvedSplits {
        &self.splits
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn rows(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.splits.train.clone(),
            Split::Validation => self.splits.validation.clone(),
            Split::Test => self.splits.test.clone(),
        }
    }

    fn guard(&self, split: Split, final_run: bool) -> Result<()> {
        if split == Split::Test && !final_run {
            return Err(BacktestError::Leakage("the test split is only readable in a final run".into()));
        }
        Ok(())
    }

    /// Every date up to the end of `split`; the only panel callers should
    /// compute scores from.
    pub fn visible_panel(&self, split: Split, final_run: bool) -> Result<Panel> {
        self.guard(split, final_run)?;
        Ok(self.panel.slice_dates(0..self.rows(split).end)?)
    }

    pub fn report(&self, split: Split, scores: &Matrix, final_run: bool) -> Result<BacktestReport> {
        self.guard(split, final_run)?;
        let rows = self.rows(split);
        if scores.rows() < rows.end || scores.cols() != self.panel.n_instruments() {
            return Err(BacktestError::Invalid(format!(
                "scores are {}x{}, need at least {}x{}",
                scores.rows(),
                scores.cols(),
                rows.end,
                self.panel.n_instruments()
            )));
        }
        let returns = self.returns.within(rows.clone());
        Ok(BacktestReport::compute(split, self.panel.dates(), scores, &returns, rows, &self.strategy))
    }

    /// (R_train, R_val): the only reports optimization ever sees.
    pub fn optimization_reports(&self, scores: &Matrix) -> Result<(BacktestReport, BacktestReport)> {
        Ok((self.report(Split::Train, scores, false)?, self.report(Split::Validation, scores, false)?))
    }
}
