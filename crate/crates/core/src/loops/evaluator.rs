use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestEngine, BacktestReport, Split, StrategyConfig};
use crate::dsl::{evaluate, FactorExpr};
use crate::logic::MarketLogicStruct;
use crate::matrix::Matrix;
use crate::model::{base_factors, FeatureBlock, ScoreModel};
use crate::panel::{cross_sectional_zscore, forward_returns, Panel, ResolvedSplits};

use super::{LoopError, Result};

/// How a candidate becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Base factors plus the candidate through the ridge score model.
    Combined,
    /// The candidate's values are the scores.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub train: BacktestReport,
    pub val: BacktestReport,
    /// Validation IC of the candidate's own values; sets the sign preference.
    pub raw_val_ic: Option<f64>,
}

pub trait CandidateEvaluator {
    fn evaluate(&self, expr: &FactorExpr, h: &MarketLogicStruct) -> Result<Evaluation>;

    /// Test-split report after refitting on train and validation. Only for
    /// the final run.
    fn final_test(&self, expr: &FactorExpr, h: &MarketLogicStruct, final_run: bool) -> Result<BacktestReport>;
}

/// The real evaluator. Optimization only ever sees the panel cut at the end of
/// the validation split.
#[derive(Debug, Clone)]
pub struct PanelEvaluator {
    engine: BacktestEngine,
    visible: Panel,
    base: FeatureBlock,
    mode: EvalMode,
    ridge_lambda: f64,
}

const CANDIDATE: &str = "candidate";

impl PanelEvaluator {
    pub fn new(
        panel: Panel,
        splits: ResolvedSplits,
        strategy: StrategyConfig,
        mode: EvalMode,
        ridge_lambda: f64,
    ) -> Result<Self> {
        let engine = BacktestEngine::new(panel, splits, strategy)?;
        let visible = engine.visible_panel(Split::Validation, false)?;
        let base = base_factors(&visible);
        Ok(PanelEvaluator { engine, visible, base, mode, ridge_lambda })
    }

    pub fn engine(&self) -> &BacktestEngine {
        &self.engine
    }

    fn scores(
        &self,
        base: &FeatureBlock,
        raw: &Matrix,
        panel: &Panel,
        h: &MarketLogicStruct,
        fit_rows: std::ops::Range<usize>,
        predict_rows: std::ops::Range<usize>,
    ) -> Result<Matrix> {
        match self.mode {
            EvalMode::Raw => Ok(raw.clone()),
            EvalMode::Combined => {
                let block = base.with_raw(CANDIDATE, raw)?;
                let labels = cross_sectional_zscore(&forward_returns(panel, h.b.h as usize).within(fit_rows.clone()));
                let model = ScoreModel::fit(&block, &labels, fit_rows, self.ridge_lambda)?;
                Ok(model.predict(&block, predict_rows)?)
            }
        }
    }
}

impl CandidateEvaluator for PanelEvaluator {
    fn evaluate(&self, expr: &FactorExpr, h: &MarketLogicStruct) -> Result<Evaluation> {
        let splits = self.engine.splits();
        let raw = evaluate(expr, &self.visible);
        let raw_val_ic = self.engine.report(Split::Validation, &raw, false)?.ic;
        let scores = self.scores(&self.base, &raw, &self.visible, h, splits.train.clone(), 0..splits.validation.end)?;
        let (train, val) = self.engine.optimization_reports(&scores)?;
        Ok(Evaluation { train, val, raw_val_ic })
    }

    fn final_test(&self, expr: &FactorExpr, h: &MarketLogicStruct, final_run: bool) -> Result<BacktestReport> {
        if !final_run {
            return Err(LoopError::Leakage("the test report needs the final-run flag".into()));
        }
        let full = self.engine.visible_panel(Split::Test, true)?;
        let splits = self.engine.splits();
        let raw = evaluate(expr, &full);
        let base = base_factors(&full);
        let fit = splits.train.start..splits.validation.end;
        let scores = self.scores(&base, &raw, &full, h, fit, splits.test.clone())?;
        Ok(self.engine.report(Split::Test, &scores, true)?)
    }
}
