//! Market logic in its three forms: free text, the structured record
//! (conditions + prediction) and the compiled constraint set that restricts
//! factor generation.

mod canonical;
mod compile;
mod formula;
mod record;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use canonical::canonicalize_fields;
pub use compile::{check, compile, CheckReport, ConstraintSet, ParamRule, Rule, Violation};
pub use formula::Formula;
pub use record::{read_library, write_library, CanonicalRecord, LibraryEntry, SCHEMA_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("predicate {predicate}: {message}")]
    Compile { predicate: String, message: String },
    #[error("canonicalization failed: {0}")]
    Canonicalize(String),
    #[error("malformed formula: {0}")]
    Formula(String),
    #[error("invalid logic: {0}")]
    Invalid(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },
    #[error("malformed record: {0}")]
    Record(String),
}

pub type Result<T> = std::result::Result<T, LogicError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Mined,
    Generated,
    Refined,
}

/// Human-readable logic H with its condition and prediction narratives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MarketLogicFields")]
pub struct MarketLogic {
    pub id: String,
    pub provenance: Provenance,
    pub logic_text: String,
    pub c_text: String,
    pub b_text: String,
}

#[derive(Deserialize)]
struct MarketLogicFields {
    id: String,
    provenance: Provenance,
    logic_text: String,
    c_text: String,
    b_text: String,
}

impl TryFrom<MarketLogicFields> for MarketLogic {
    type Error = LogicError;

    fn try_from(f: MarketLogicFields) -> Result<Self> {
        MarketLogic::new(f.id, f.provenance, f.logic_text, f.c_text, f.b_text)
    }
}

impl MarketLogic {
    pub fn new(
        id: impl Into<String>,
        provenance: Provenance,
        logic_text: impl Into<String>,
        c_text: impl Into<String>,
        b_text: impl Into<String>,
    ) -> Result<Self> {
        let logic = MarketLogic {
            id: id.into(),
            provenance,
            logic_text: logic_text.into(),
            c_text: c_text.into(),
            b_text: b_text.into(),
        };
        for (name, value) in
            [("id", &logic.id), ("logic_text", &logic.logic_text), ("c_text", &logic.c_text), ("b_text", &logic.b_text)]
        {
            if value.trim().is_empty() {
                return Err(LogicError::Invalid(format!("{name} must be non-empty")));
            }
        }
        Ok(logic)
    }

    /// Single-line text used in prompts and histories.
    pub fn render(&self) -> String {
        format!("{} (C) {} (B) {}", self.logic_text, self.c_text, self.b_text)
    }
}

/// Canonical predicate variable vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogicVar {
    Price,
    Open,
    High,
    Low,
    Close,
    Volume,
    Return,
}

/// Coarse variable kinds that drive compilation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    Price,
    Volume,
    Return,
}

impl LogicVar {
    pub const ALL: [LogicVar; 7] = [
        LogicVar::Price,
        LogicVar::Open,
        LogicVar::High,
        LogicVar::Low,
        LogicVar::Close,
        LogicVar::Volume,
        LogicVar::Return,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LogicVar::Price => "price",
            LogicVar::Open => "open",
            LogicVar::High => "high",
            LogicVar::Low => "low",
            LogicVar::Close => "close",
            LogicVar::Volume => "volume",
            LogicVar::Return => "return",
        }
    }

    pub fn kind(self) -> VarKind {
        match self {
            LogicVar::Volume => VarKind::Volume,
            LogicVar::Return => VarKind::Return,
            _ => VarKind::Price,
        }
    }

    /// Canonical name or a known synonym.
    pub fn from_synonym(raw: &str) -> Option<LogicVar> {
        let norm = normalize_token(raw);
        let norm = norm.trim_start_matches('$');
        Some(match norm {
            "price" | "prices" | "px" | "price_level" | "stock_price" | "asset_price" => LogicVar::Price,
            "open" | "open_price" | "opening_price" => LogicVar::Open,
            "high" | "high_price" | "intraday_high" | "daily_high" => LogicVar::High,
            "low" | "low_price" | "intraday_low" | "daily_low" => LogicVar::Low,
            "close" | "close_price" | "closing_price" | "last" => LogicVar::Close,
            "volume" | "volumes" | "vol" | "turnover" | "trading_volume" | "amount" | "shares_traded" => LogicVar::Volume,
            "return" | "returns" | "ret" | "daily_return" | "pct_change" => LogicVar::Return,
            _ => return None,
        })
    }
}

impl fmt::Display for LogicVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lowercase, with separators folded to `_`.
pub(crate) fn normalize_token(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.trim().chars() {
        if c.is_whitespace() || c == '-' {
            if !out.ends_with('_') {
                out.push('_');
            }
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// One condition c = (v, op, theta, w). `theta` is carried verbatim and never
/// evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub id: String,
    pub v: LogicVar,
    pub op: String,
    pub theta: String,
    pub w: u32,
}

/// Predicted direction of the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Positive => 1.0,
            Direction::Negative => -1.0,
        }
    }

    pub fn as_i64(self) -> i64 {
        self.sign() as i64
    }

    /// Accepts `1`, `-1`, `"+1"`, `"-1"`, `"positive"`, `"negative"`, `"up"`, `"down"`, ...
    pub fn from_json(v: &serde_json::Value) -> Option<Direction> {
        match v {
            serde_json::Value::Number(n) => match n.as_f64()? {
                x if x == 1.0 => Some(Direction::Positive),
                x if x == -1.0 => Some(Direction::Negative),
                _ => None,
            },
            serde_json::Value::String(s) => s.parse().ok(),
            _ => None,
        }
    }
}

impl FromStr for Direction {
    type Err = LogicError;

    fn from_str(s: &str) -> Result<Direction> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "+1" | "+" | "1.0" | "positive" | "pos" | "up" | "long" | "higher" => Ok(Direction::Positive),
            "-1" | "-" | "-1.0" | "negative" | "neg" | "down" | "short" | "lower" | "reversal" => {
                Ok(Direction::Negative)
            }
            other => Err(LogicError::Canonicalize(format!("direction {other:?} is not +1 or -1"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "+1",
            Direction::Negative => "-1",
        })
    }
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i64(self.as_i64())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Direction::from_json(&v).ok_or_else(|| serde::de::Error::custom(format!("direction {v} is not +1 or -1")))
    }
}

/// The only target the backtester can compute.
pub const FORWARD_RETURN: &str = "forward_return";

/// Prediction B = (y, d, h).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub y: String,
    pub d: Direction,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditions {
    pub formula: Formula,
    pub predicates: Vec<Predicate>,
}

/// H^struct: a boolean formula over predicates plus a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StructFields")]
pub struct MarketLogicStruct {
    #[serde(rename = "C")]
    pub c: Conditions,
    #[serde(rename = "B")]
    pub b: Prediction,
}

#[derive(Deserialize)]
struct StructFields {
    #[serde(rename = "C")]
    c: Conditions,
    #[serde(rename = "B")]
    b: Prediction,
}

impl TryFrom<StructFields> for MarketLogicStruct {
    type Error = LogicError;

    fn try_from(f: StructFields) -> Result<Self> {
        MarketLogicStruct::new(f.c.formula, f.c.predicates, f.b)
    }
}

impl MarketLogicStruct {
    pub fn new(formula: Formula, predicates: Vec<Predicate>, b: Prediction) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for p in &predicates {
            if !ids.insert(p.id.as_str()) {
                return Err(LogicError::Invalid(format!("predicate id {:?} appears more than once", p.id)));
            }
            if p.w < 1 {
                return Err(LogicError::Invalid(format!("predicate {}: window must be >= 1", p.id)));
            }
            if p.op.trim().is_empty() {
                return Err(LogicError::Invalid(format!("predicate {}: empty op", p.id)));
            }
        }
        for id in formula.references() {
            if !ids.contains(id) {
                return Err(LogicError::Invalid(format!("formula references unknown predicate {id:?}")));
            }
        }
        if b.y != FORWARD_RETURN {
            return Err(LogicError::Invalid(format!("target {:?} is not computable; only {FORWARD_RETURN}", b.y)));
        }
        if b.h < 1 {
            return Err(LogicError::Invalid("horizon must be >= 1".into()));
        }
        Ok(MarketLogicStruct { c: Conditions { formula, predicates }, b })
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.c.predicates
    }

    pub fn formula(&self) -> &Formula {
        &self.c.formula
    }

    pub fn prediction(&self) -> &Prediction {
        &self.b
    }

    /// Same logic with one more predicate conjoined.
    pub fn with_predicate(&self, p: Predicate) -> Result<Self> {
        let id = p.id.clone();
        let mut preds = self.c.predicates.clone();
        preds.push(p);
        let formula = match self.c.formula.clone() {
            Formula::And(mut parts) => {
                parts.push(Formula::Pred(id));
                Formula::And(parts)
            }
            other => Formula::And(vec![other, Formula::Pred(id)]),
        };
        MarketLogicStruct::new(formula, preds, self.b.clone())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synonyms() {
        assert_eq!(LogicVar::from_synonym("Turnover"), Some(LogicVar::Volume));
        assert_eq!(LogicVar::from_synonym("vol"), Some(LogicVar::Volume));
        assert_eq!(LogicVar::from_synonym("Closing Price"), Some(LogicVar::Close));
        assert_eq!(LogicVar::from_synonym("$close"), Some(LogicVar::Close));
        assert_eq!(LogicVar::from_synonym("earnings"), None);
    }

    #[test]
    fn direction_spellings() {
        assert_eq!("-1".parse::<Direction>().unwrap(), Direction::Negative);
        assert_eq!("+1".parse::<Direction>().unwrap(), Direction::Positive);
        assert_eq!(Direction::from_json(&serde_json::json!(-1)), Some(Direction::Negative));
        assert_eq!(Direction::from_json(&serde_json::json!(0)), None);
        assert!("sideways".parse::<Direction>().is_err());
    }

    #[test]
    fn struct_invariants() {
        let s = fixtures::divergence_struct();
        let b = s.b.clone();
        let bad = MarketLogicStruct::new(Formula::parse("p1 AND p9").unwrap(), s.c.predicates.clone(), b.clone());
        assert!(bad.is_err());
        let mut dup = s.c.predicates.clone();
        dup.push(dup[0].clone());
        assert!(MarketLogicStruct::new(s.c.formula.clone(), dup, b.clone()).is_err());
        let other_target = Prediction { y: "volatility".into(), ..b };
        assert!(MarketLogicStruct::new(s.c.formula.clone(), s.c.predicates.clone(), other_target).is_err());
    }

    #[test]
    fn logic_text_required() {
        assert!(MarketLogic::new("h1", Provenance::Mined, "x", " ", "y").is_err());
        assert!(MarketLogic::new("h1", Provenance::Mined, "x", "c", "b").is_ok());
    }
}
