//! Normalisation of agent-produced structured logic into a valid
//! [`MarketLogicStruct`]. Only names and defaults change; meaning does not.

use serde_json::Value;

use super::{
    normalize_token, Direction, Formula, LogicError, LogicVar, MarketLogicStruct, Predicate, Prediction, Result,
    FORWARD_RETURN,
};

fn err(msg: impl Into<String>) -> LogicError {
    LogicError::Canonicalize(msg.into())
}

/// Accepts either the bare `{C, B}` record or a full agent response carrying
/// it under `H_struct`.
pub fn canonicalize_fields(raw: &Value) -> Result<MarketLogicStruct> {
    let root = raw.get("H_struct").unwrap_or(raw);
    let c = field(root, &["C", "c", "conditions"]).ok_or_else(|| err("missing C"))?;
    let b = field(root, &["B", "b", "prediction"]).ok_or_else(|| err("missing B"))?;

    let raw_preds = match field(c, &["predicates"]) {
        Some(Value::Array(items)) => items.as_slice(),
        Some(_) => return Err(err("C.predicates must be a list")),
        None => return Err(err("C.predicates missing")),
    };
    let mut predicates: Vec<Predicate> = Vec::new();
    for (i, item) in raw_preds.iter().enumerate() {
        let p = predicate(item, i)?;
        match predicates.iter().find(|q| q.id == p.id) {
            Some(q) if *q == p => {}
            Some(_) => return Err(err(format!("predicate id {:?} is defined twice with different content", p.id))),
            None => predicates.push(p),
        }
    }
    if predicates.is_empty() {
        return Err(err("C has no predicates"));
    }

    let formula = match field(c, &["formula"]) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(Formula::parse(s)?),
        Some(other) => return Err(err(format!("C.formula must be text, got {other}"))),
    };
    let formula = formula.unwrap_or_else(|| {
        let ids: Vec<&str> = predicates.iter().map(|p| p.id.as_str()).collect();
        Formula::all_of(&ids)
    });

    let y = match field(b, &["y", "target"]) {
        None | Some(Value::Null) => FORWARD_RETURN.to_string(),
        Some(Value::String(s)) => target(s)?,
        Some(other) => return Err(err(format!("B.y must be text, got {other}"))),
    };
    let d = match field(b, &["d", "direction"]) {
        None | Some(Value::Null) => return Err(err("B.d is required")),
        Some(v) => Direction::from_json(v).ok_or_else(|| err(format!("B.d {v} is not +1 or -1")))?,
    };
    let h = positive_int(field(b, &["h", "horizon"]), "B.h")?;

    MarketLogicStruct::new(formula, predicates, Prediction { y, d, h })
        .map_err(|e| err(e.to_string()))
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn predicate(item: &Value, index: usize) -> Result<Predicate> {
    let id = field(item, &["id"]).and_then(text).filter(|s| !s.is_empty()).unwrap_or_else(|| format!("p{}", index + 1));
    let raw_v = field(item, &["v", "variable"]).and_then(text).ok_or_else(|| err(format!("predicate {id}: v missing")))?;
    let v = LogicVar::from_synonym(&raw_v)
        .ok_or_else(|| err(format!("predicate {id}: unrecognized variable {raw_v:?}")))?;
    let raw_op = field(item, &["op", "operator"]).and_then(text).ok_or_else(|| err(format!("predicate {id}: op missing")))?;
    let theta = match field(item, &["theta", "threshold"]) {
        None | Some(Value::Null) => String::new(),
        Some(t) => text(t).unwrap_or_else(|| t.to_string()),
    };
    let w = positive_int(field(item, &["w", "window"]), &format!("predicate {id} w"))?;
    Ok(Predicate { id, v, op: canonical_op(&raw_op, &raw_v, v), theta, w })
}

/// Normalises the op token and drops a leading variable name
/// (`price_trend_up` on a price predicate becomes `trend_up`).
fn canonical_op(raw: &str, raw_v: &str, v: LogicVar) -> String {
    let mut op = normalize_token(raw);
    let prefixes = [format!("{}_", normalize_token(raw_v)), format!("{}_", v.name())];
    while let Some(rest) = prefixes.iter().find_map(|p| op.strip_prefix(p.as_str()).filter(|r| !r.is_empty())) {
        op = rest.to_string();
    }
    op
}

fn target(raw: &str) -> Result<String> {
    match normalize_token(raw).as_str() {
        "forward_return" | "forward_returns" | "next_return" | "future_return" | "fwd_return" | "return"
        | "returns" | "next_day_return" => Ok(FORWARD_RETURN.to_string()),
        other => Err(err(format!("target {other:?} is not computable; only {FORWARD_RETURN}"))),
    }
}

fn positive_int(v: Option<&Value>, what: &str) -> Result<u32> {
    let n = match v {
        None | Some(Value::Null) => return Ok(1),
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => {
            let s = s.trim();
            let s = s.strip_suffix('d').or_else(|| s.strip_suffix(" days")).unwrap_or(s).trim();
            if s.is_empty() {
                return Ok(1);
            }
            s.parse::<f64>().ok()
        }
        Some(_) => None,
    };
    match n {
        Some(x) if x.fract() == 0.0 && x >= 1.0 && x <= u32::MAX as f64 => Ok(x as u32),
        _ => Err(err(format!("{what} must be a positive integer"))),
    }
}
