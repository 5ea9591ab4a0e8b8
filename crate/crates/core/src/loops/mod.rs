//! The two search loops: factor optimization under a fixed logic, and logic
//! generation and refinement around it. Plus the one-shot test evaluation.

mod evaluator;
mod inner;
mod objective;
mod outer;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::backtest::{render_table, BacktestError, BacktestReport};
use crate::dsl::parse;
use crate::logic::LogicError;
use crate::model::ModelError;

pub use evaluator::{CandidateEvaluator, EvalMode, Evaluation, PanelEvaluator};
pub use inner::{inner_loop, CandidateRecord, Evidence, RoundRecord, StopReason};
pub use objective::{argmax, Metric, Objective, Standing, Term};
pub use outer::{outer_loop, OuterState, STATE_VERSION};
pub use run::{write_json, RunDir};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error("invalid loop configuration: {0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("corrupt record {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("run state version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("no logic produced a scored factor")]
    NoBest,
}

pub type Result<T> = std::result::Result<T, LoopError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Outer rounds T.
    pub t_outer: usize,
    /// Consecutive non-improving inner rounds before stopping.
    pub t_early: usize,
    pub candidates_per_round: usize,
    /// Feedback buffer length M.
    pub buffer_m: usize,
    /// Candidate trials per logic.
    pub trial_cap: usize,
    pub objective: Objective,
    pub mode: EvalMode,
    pub ridge_lambda: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            t_outer: 5,
            t_early: 3,
            candidates_per_round: 5,
            buffer_m: 5,
            trial_cap: 20,
            objective: Objective::default(),
            mode: EvalMode::Combined,
            ridge_lambda: 1.0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_outer", self.t_outer),
            ("t_early", self.t_early),
            ("candidates_per_round", self.candidates_per_round),
            ("buffer_m", self.buffer_m),
            ("trial_cap", self.trial_cap),
        ] {
            if v == 0 {
                return Err(LoopError::Invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(LoopError::Invalid("ridge_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// The test-split outcome of the best logic's best factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub logic_id: String,
    pub logic_text: String,
    pub expression: String,
    pub validation: Option<BacktestReport>,
    pub test: BacktestReport,
}

impl FinalReport {
    pub fn table(&self) -> String {
        let mut rows = Vec::new();
        if let Some(v) = &self.validation {
            rows.push(("validation", v));
        }
        rows.push(("test", &self.test));
        render_table(&rows)
    }
}

/// Refits on train and validation and backtests the test split once. Needs a
/// completed optimization and the final-run flag; with a run directory the
/// first report is cached and returned on later calls.
pub fn final_evaluation(
    state: &OuterState,
    evaluator: &dyn CandidateEvaluator,
    run: Option<&RunDir>,
    final_run: bool,
) -> Result<FinalReport> {
    if !final_run {
        return Err(LoopError::Leakage("final evaluation needs the final-run flag".into()));
    }
    if !state.completed {
        return Err(LoopError::Leakage("optimization has not completed".into()));
    }
    if let Some(r) = run {
        if let Some(cached) = r.load_final()? {
            return Ok(cached);
        }
    }
    let ev = state.best_evidence().ok_or(LoopError::NoBest)?;
    let cand = ev.best_candidate().ok_or(LoopError::NoBest)?;
    let h = ev.h_struct.as_ref().ok_or(LoopError::NoBest)?;
    let expr = parse(&cand.expression).map_err(|e| LoopError::Invalid(format!("stored expression: {e}")))?;
    let test = evaluator.final_test(&expr, h, true)?;
    let logic = state.best_logic().ok_or(LoopError::NoBest)?;
    let report = FinalReport {
        logic_id: logic.id.clone(),
        logic_text: logic.render(),
        expression: cand.expression.clone(),
        validation: cand.val.clone(),
        test,
    };
    if let Some(r) = run {
        r.save_final(&report)?;
    }
    Ok(report)
}
