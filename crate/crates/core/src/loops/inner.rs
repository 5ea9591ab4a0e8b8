use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{Agents, CandidateMetrics};
use crate::backtest::BacktestReport;
use crate::dsl::parse;
use crate::logic::{ConstraintSet, Direction, MarketLogic, MarketLogicStruct};

use super::objective::{argmax, Standing};
use super::{CandidateEvaluator, LoopConfig, Result};

/// One evaluated (or failed) candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub round: usize,
    pub expression: String,
    /// Negated to match the logic's direction.
    pub flipped: bool,
    pub standing: Option<Standing>,
    pub train: Option<BacktestReport>,
    pub val: Option<BacktestReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub generated: usize,
    pub rejected: usize,
    pub skipped: Option<String>,
    pub improved: bool,
    pub counter: usize,
    pub feedback_requested: bool,
    pub feedback: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    TrialCap,
    InvalidLogic,
}

/// What one inner loop learned about a logic. Only train and validation
/// reports appear here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub logic_id: String,
    pub h_struct: Option<MarketLogicStruct>,
    pub gamma: Option<ConstraintSet>,
    pub candidates: Vec<CandidateRecord>,
    pub rounds: Vec<RoundRecord>,
    /// Index into `candidates` of the best validation standing.
    pub best: Option<usize>,
    pub feedback_requests: usize,
    pub stop: StopReason,
    pub invalid: Option<String>,
}

fn metrics_json(r: &BacktestReport) -> Value {
    json!({"IC": r.ic, "ICIR": r.icir, "AR": r.ar, "IR": r.ir, "MDD": r.mdd})
}

impl Evidence {
    pub fn best_candidate(&self) -> Option<&CandidateRecord> {
        self.best.map(|i| &self.candidates[i])
    }

    pub fn standing(&self) -> Option<Standing> {
        self.best_candidate().and_then(|c| c.standing)
    }

    pub fn r_val_best(&self) -> Option<&BacktestReport> {
        self.best_candidate().and_then(|c| c.val.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_none()
    }

    /// The record handed to the logic agents.
    pub fn to_agent_json(&self) -> Value {
        let table: Vec<Value> = self
            .candidates
            .iter()
            .filter_map(|c| {
                let v = c.val.as_ref()?;
                let mut m = metrics_json(v);
                m["expression"] = json!(c.expression);
                m["flipped"] = json!(c.flipped);
                Some(m)
            })
            .collect();
        json!({
            "logic_id": self.logic_id,
            "H_struct": self.h_struct,
            "best_expression": self.best_candidate().map(|c| c.expression.clone()),
            "R_val_best": self.r_val_best().map(metrics_json),
            "candidates": table,
            "empty": self.is_empty(),
            "invalid": self.invalid,
        })
    }
}

fn invalid(h: &MarketLogic, message: String) -> Evidence {
    Evidence {
        logic_id: h.id.clone(),
        h_struct: None,
        gamma: None,
        candidates: Vec::new(),
        rounds: Vec::new(),
        best: None,
        feedback_requests: 0,
        stop: StopReason::InvalidLogic,
        invalid: Some(message),
    }
}

fn feedback_entry(c: &CandidateRecord) -> Option<CandidateMetrics> {
    let v = c.val.as_ref()?;
    Some(CandidateMetrics { expression: c.expression.clone(), ic: v.ic?, ir: v.ir?, mdd: v.mdd? })
}

/// Factor search under one fixed logic: canonicalize and compile once, then
/// generate, evaluate and keep the best by J on validation until `t_early`
/// consecutive rounds bring no strict improvement or the trial cap is hit.
pub fn inner_loop(
    h: &MarketLogic,
    agents: &Agents<'_>,
    evaluator: &dyn CandidateEvaluator,
    cfg: &LoopConfig,
) -> Result<Evidence> {
    let canon = match agents.canonicalize(h) {
        Ok(c) => c,
        Err(e) => {
            tracing::warn!(logic = %h.id, error = %e, "logic could not be canonicalized");
            return Ok(invalid(h, e.to_string()));
        }
    };
    let mut ev = Evidence {
        logic_id: h.id.clone(),
        h_struct: Some(canon.h_struct.clone()),
        gamma: Some(canon.gamma.clone()),
        candidates: Vec::new(),
        rounds: Vec::new(),
        best: None,
        feedback_requests: 0,
        stop: StopReason::EarlyStop,
        invalid: None,
    };
    let h_struct = &canon.h_struct;
    let gamma = &canon.gamma;
    let mut counter = 0usize;
    let mut feedback: Option<Value> = None;
    let mut buffer: VecDeque<CandidateMetrics> = VecDeque::new();
    let mut trials = 0usize;
    let mut round = 0usize;

    while counter < cfg.t_early {
        if trials >= cfg.trial_cap {
            ev.stop = StopReason::TrialCap;
            break;
        }
        round += 1;
        let budget = cfg.candidates_per_round.min(cfg.trial_cap - trials);
        let mut rec = RoundRecord {
            round,
            generated: 0,
            rejected: 0,
            skipped: None,
            improved: false,
            counter,
            feedback_requested: false,
            feedback: None,
        };
        let generation = match agents.generate_factors(gamma, feedback.as_ref(), budget) {
            Ok(g) => g,
            Err(e) => {
                tracing::warn!(logic = %h.id, round, error = %e, "generation round skipped");
                counter += 1;
                rec.skipped = Some(e.to_string());
                rec.counter = counter;
                ev.rounds.push(rec);
                continue;
            }
        };
        rec.generated = generation.factors.len();
        rec.rejected = generation.rejected.len();
        trials += generation.factors.len();

        let first = ev.candidates.len();
        for f in generation.factors {
            ev.candidates.push(evaluate_candidate(round, f.expression, h_struct, evaluator, cfg));
        }
        let round_best = argmax(ev.candidates[first..].iter().map(|c| c.standing)).map(|i| first + i);
        if let Some(i) = round_best {
            let s = ev.candidates[i].standing.expect("argmax picks a scored candidate");
            if s.improves_on(ev.standing().as_ref()) {
                ev.best = Some(i);
                rec.improved = true;
            }
        }
        counter = if rec.improved { 0 } else { counter + 1 };
        rec.counter = counter;

        for c in &ev.candidates[first..] {
            if let Some(m) = feedback_entry(c) {
                buffer.push_back(m);
            }
        }
        while buffer.len() > cfg.buffer_m {
            buffer.pop_front();
        }
        if counter < cfg.t_early && !buffer.is_empty() {
            rec.feedback_requested = true;
            ev.feedback_requests += 1;
            let entries: Vec<CandidateMetrics> = buffer.iter().cloned().collect();
            feedback = match agents.factor_feedback(h_struct, &entries) {
                Ok(fb) => Some(serde_json::to_value(fb).expect("feedback serializes")),
                Err(e) => {
                    tracing::warn!(logic = %h.id, round, error = %e, "factor feedback omitted");
                    None
                }
            };
            rec.feedback = feedback.clone();
        }
        ev.rounds.push(rec);
    }
    Ok(ev)
}

fn evaluate_candidate(
    round: usize,
    expr: crate::dsl::FactorExpr,
    h: &MarketLogicStruct,
    evaluator: &dyn CandidateEvaluator,
    cfg: &LoopConfig,
) -> CandidateRecord {
    let fail = |expression: String, flipped: bool, e: String| CandidateRecord {
        round,
        expression,
        flipped,
        standing: None,
        train: None,
        val: None,
        error: Some(e),
    };
    let mut expr = expr;
    let mut eval = match evaluator.evaluate(&expr, h) {
        Ok(e) => e,
        Err(e) => return fail(expr.to_string(), false, e.to_string()),
    };
    let mut flipped = false;
    let wanted = match h.b.d {
        Direction::Positive => 1.0,
        Direction::Negative => -1.0,
    };
    if eval.raw_val_ic.is_some_and(|ic| ic * wanted < 0.0) {
        // reparse so the stored text and the evaluated tree agree
        let negated = expr.negated();
        expr = parse(&negated.to_string()).unwrap_or(negated);
        flipped = true;
        eval = match evaluator.evaluate(&expr, h) {
            Ok(e) => e,
            Err(e) => return fail(expr.to_string(), true, e.to_string()),
        };
    }
    CandidateRecord {
        round,
        expression: expr.to_string(),
        flipped,
        standing: Standing::of(&cfg.objective, &eval.val),
        train: Some(eval.train.scalars_only()),
        val: Some(eval.val.scalars_only()),
        error: None,
    }
}
