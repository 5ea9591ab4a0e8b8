//! Seeded synthetic OHLCV panel with a planted price-up / volume-down
//! reversal, plus the scripted agent fixtures and starter files that drive
//! an end-to-end run on it.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{AgentName, Fixture, FixtureFile};
use crate::logic::{LibraryEntry, MarketLogic, Provenance};
use crate::matrix::Matrix;
use crate::panel::{DateInterval, Panel, SplitSpec};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dates: usize,
    pub instruments: usize,
    pub seed: u64,
    /// Next-day return loading on the z-scored divergence signal.
    pub signal: f64,
    pub noise: f64,
    pub start: NaiveDate,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dates: 200,
            instruments: 60,
            seed: 7,
            signal: 0.006,
            noise: 0.015,
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
        }
    }
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn zscore(xs: &[f64]) -> Vec<f64> {
    let m = stats::mean(xs);
    let s = stats::std_pop(xs);
    xs.iter().map(|x| if s > 0.0 { (x - m) / s } else { 0.0 }).collect()
}

/// Next-day return = -signal * z(rank(price change) - rank(volume change))
/// + noise, so names that rose on falling volume tend to fall back.
pub fn synthetic_panel(cfg: &SyntheticConfig) -> Panel {
    let (n, m) = (cfg.dates, cfg.instruments);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps = Normal::new(0.0, cfg.noise).expect("positive noise");
    let vol_shock = Normal::new(0.0, 0.25).expect("positive sd");
    let wick = Normal::new(0.0, 0.004).expect("positive sd");

    let mut close = Matrix::missing(n, m);
    let mut open = Matrix::missing(n, m);
    let mut high = Matrix::missing(n, m);
    let mut low = Matrix::missing(n, m);
    let mut volume = Matrix::missing(n, m);
    let base_vol: Vec<f64> = (0..m).map(|_| rng.random_range(5e5..5e6)).collect();
    let mut ret = vec![0.0; m];
    let mut dvol = vec![0.0; m];
    for t in 0..n {
        let planted = if t >= 1 {
            let price_rank = stats::average_ranks(&ret);
            let vol_rank = stats::average_ranks(&dvol);
            let div: Vec<f64> = price_rank.iter().zip(&vol_rank).map(|(p, v)| p - v).collect();
            zscore(&div)
        } else {
            vec![0.0; m]
        };
        for i in 0..m {
            let prev = if t == 0 { rng.random_range(10.0..100.0) } else { close.raw(t - 1, i) };
            let r = if t == 0 { 0.0 } else { -cfg.signal * planted[i] + eps.sample(&mut rng) };
            let c = prev * (1.0 + r);
            let o = prev * (1.0 + wick.sample(&mut rng));
            let hi = o.max(c) * (1.0 + wick.sample(&mut rng).abs());
            let lo = o.min(c) * (1.0 - wick.sample(&mut rng).abs());
            let log_shock: f64 = vol_shock.sample(&mut rng);
            let v = (base_vol[i] * log_shock.exp()).round();
            let prev_v = if t == 0 { v } else { volume.raw(t - 1, i) };
            close.set(t, i, c);
            open.set(t, i, o);
            high.set(t, i, hi);
            low.set(t, i, lo);
            volume.set(t, i, v);
            ret[i] = r;
            dvol[i] = v / prev_v - 1.0;
        }
    }
    let instruments = (0..m).map(|i| format!("SYN{i:03}")).collect();
    Panel::new(business_days(cfg.start, n), instruments, [open, high, low, close, volume])
        .expect("synthetic fields share one shape")
}

/// 60 / 20 / 20 percent date splits.
pub fn default_splits(panel: &Panel) -> SplitSpec {
    let d = panel.dates();
    let n = d.len();
    let a = n * 6 / 10;
    let b = n * 8 / 10;
    SplitSpec {
        train: DateInterval::new(d[0], d[a - 1]),
        validation: DateInterval::new(d[a], d[b - 1]),
        test: DateInterval::new(d[b], d[n - 1]),
    }
}

pub fn seed_library() -> Vec<LibraryEntry> {
    [
        (
            "seed-001",
            "rising intraday highs without rising volume tend to reverse",
            "the daily high rises while volume does not rise",
            "next-day forward return is negative",
        ),
        (
            "seed-002",
            "heavy volume on up days confirms the move",
            "close rises and volume rises above its recent average",
            "next-day forward return is positive",
        ),
    ]
    .into_iter()
    .map(|(id, l, c, b)| LibraryEntry::bare(MarketLogic::new(id, Provenance::Mined, l, c, b).expect("non-empty texts")))
    .collect()
}

fn any(agent: AgentName, completion: Value) -> Fixture {
    Fixture { agent, fingerprint: None, matches: None, completions: vec![completion] }
}

fn on_round(round: u32, completion: Value) -> Fixture {
    Fixture {
        agent: AgentName::MarketLogicGeneratorAgent,
        fingerprint: None,
        matches: Some(json!({"round": round})),
        completions: vec![completion],
    }
}

fn h_struct(price_op: &str, volume_op: &str, d: i64) -> Value {
    json!({
        "H_struct": {
            "C": {
                "formula": "p1 AND p2",
                "predicates": [
                    {"id": "p1", "v": "price", "op": price_op, "theta": "", "w": 1},
                    {"id": "p2", "v": "volume", "op": volume_op, "theta": "", "w": 1}
                ]
            },
            "B": {"y": "forward_return", "d": d, "h": 1}
        },
        "Gamma": {
            "allowed_variables": ["open", "high", "low", "close", "volume"],
            "operator_families": ["cross_sectional", "ts_change", "ts_relation"],
            "parameter_constraints": {"window": "positive integer", "lag": "positive integer"},
            "direction_constraint": if d < 0 { "prefer negative IC" } else { "prefer positive IC" }
        },
        "canonicalization_notes": "variable names standardized"
    })
}

fn factors(list: &[(&str, &str)]) -> Value {
    let items: Vec<Value> = list
        .iter()
        .map(|(e, why)| json!({"expression": e, "rationale": why, "operators": []}))
        .collect();
    json!({"factors": items, "notes": "price-volume divergence candidates"})
}

/// Mining replies are formula-agnostic: one whole-formula component.
fn component(interpreted: bool) -> Value {
    let mut c = json!({
        "name": "whole",
        "expression": "the full formula",
        "mathematical_meaning": "cross-sectional comparison of recent price and volume changes"
    });
    if interpreted {
        c["financial_interpretation"] = json!("price moves weighed against trading participation");
    }
    c
}

/// Scripted replies for every agent that a synthetic run calls: three logic
/// generations (the divergence logic first), one structured form per logic
/// keyed on its condition text, a fixed candidate set, feedback and
/// refinement records.
pub fn synthetic_fixtures() -> FixtureFile {
    let divergence = json!({
        "logic_text": "price gains that volume does not confirm tend to reverse",
        "c_text": "close trends up over one day while volume does not trend up",
        "b_text": "next-day forward return is negative"
    });
    let body = json!({
        "logic_text": "small candle bodies on low volume after a rise signal exhaustion",
        "c_text": "close rises with shrinking volume and a small body relative to the range",
        "b_text": "next-day forward return is negative"
    });
    let momentum = json!({
        "logic_text": "volume-backed gains persist",
        "c_text": "close trends up and volume trends up",
        "b_text": "next-day forward return is positive"
    });
    let l2fc = |c_text: &Value, completion: Value| Fixture {
        agent: AgentName::LogicToFinanceConstraintAgent,
        fingerprint: None,
        matches: Some(json!({"c_text": c_text})),
        completions: vec![completion],
    };
    let fixtures = vec![
        on_round(1, divergence.clone()),
        on_round(2, body.clone()),
        on_round(3, momentum.clone()),
        any(AgentName::MarketLogicGeneratorAgent, divergence.clone()),
        l2fc(&divergence["c_text"], h_struct("trend_up", "trend_not_up", -1)),
        l2fc(&body["c_text"], h_struct("trend_up", "trend_down", -1)),
        l2fc(&momentum["c_text"], h_struct("trend_up", "trend_up", 1)),
        any(
            AgentName::FactorExpressionGeneratorAgent,
            factors(&[
                ("RANK(TS_PCTCHANGE(close, 1)) - RANK(TS_PCTCHANGE(volume, 1))", "price change rank minus volume change rank"),
                ("ZSCORE(DELTA(close, 1) / DELAY(close, 1)) - ZSCORE(DELTA(volume, 1) / DELAY(volume, 1))", "z-scored divergence"),
                ("RANK(TS_PCTCHANGE(close, 1))", "one-day price reversal"),
                ("TS_CORR(RANK(open), RANK(volume), 10)", "rolling price-volume co-movement"),
                ("RANK(TS_PCTCHANGE(close, 5)) - RANK(TS_PCTCHANGE(volume, 5))", "weekly divergence"),
            ]),
        ),
        any(
            AgentName::FactorPerformanceFeedbackAgent,
            json!({
                "summary": {"best_expression": "RANK(TS_PCTCHANGE(close, 1)) - RANK(TS_PCTCHANGE(volume, 1))", "key_metrics": "highest validation IR"},
                "feedback": ["one-day windows dominate longer ones"],
                "suggested_edits": [{"action": "tighten", "detail": "keep lags at one day"}]
            }),
        ),
        any(
            AgentName::MarketLogicRefinementDirectionAgent,
            json!({
                "refinement_actions": [{"action": "tighten", "target": "C.p2", "detail": "require volume to fall, not merely stall"}],
                "focus_variables": ["close", "volume"],
                "horizon_suggestion": "keep h = 1",
                "rationale": "short-horizon reversal carries the signal"
            }),
        ),
        any(AgentName::FormulaStructureAgent, json!({"components": [component(false)]})),
        any(AgentName::FinancialSemanticsMappingAgent, json!({"components": [component(true)]})),
        any(
            AgentName::MarketLogicAbstractionAgent,
            json!({
                "logic_text": "price moves that participation does not confirm tend to reverse",
                "c_text": "price trends up over one day while volume does not trend up",
                "b_text": "next-day forward return is negative"
            }),
        ),
    ];
    FixtureFile { fixtures }
}
