//! Deterministic compilation of H^struct into generation constraints, and the
//! conformance check applied to every generated expression.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dsl::{format_path, Expr, FactorExpr, Family, ParamKind, Slot, Variable};

use super::{normalize_token, Direction, LogicError, MarketLogicStruct, Prediction, Result, VarKind};

/// Predicate operator classes of the rule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpClass {
    Trend,
    Relation,
    Level,
    Threshold,
    Slope,
    Oscillator,
    Volatility,
}

impl OpClass {
    fn of(op: &str) -> Option<OpClass> {
        Some(match normalize_token(op).as_str() {
            "trend_up" | "trend_down" | "trend_not_up" | "trend_not_down" | "uptrend" | "downtrend" | "up" | "down"
            | "not_up" | "not_down" | "rise" | "rises" | "rising" | "fall" | "falls" | "falling" | "increase"
            | "increasing" | "decrease" | "decreasing" | "decline" | "declining" | "momentum" | "reversal"
            | "change" | "gap_up" | "gap_down" | "shrink" | "shrinking" | "contract" | "contraction" | "expand"
            | "expansion" | "surge" | "spike" => OpClass::Trend,
            "diverge" | "diverges" | "divergence" | "converge" | "convergence" | "correlate" | "correlated"
            | "correlation" | "anticorrelated" | "co_move" | "comove" | "lead" | "lag" | "relation" | "decouple" => {
                OpClass::Relation
            }
            "level" | "high_level" | "low_level" | "level_high" | "level_low" | "relative_high" | "relative_low"
            | "above_average" | "below_average" | "extreme" | "extreme_high" | "extreme_low" | "top" | "bottom"
            | "rank_high" | "rank_low" | "at_high" | "at_low" | "new_high" | "new_low" => OpClass::Level,
            "gt" | "lt" | "ge" | "le" | "eq" | "ne" | ">" | "<" | ">=" | "<=" | "==" | "!=" | "above" | "below"
            | "exceeds" | "greater_than" | "less_than" | "cross_above" | "cross_below" => OpClass::Threshold,
            "slope" | "slope_up" | "slope_down" | "slope_positive" | "slope_negative" | "regression_slope" => {
                OpClass::Slope
            }
            "overbought" | "oversold" | "oscillator" | "rsi_high" | "rsi_low" => OpClass::Oscillator,
            "volatile" | "volatility" | "volatility_up" | "volatility_down" | "high_volatility" | "low_volatility"
            | "range_expansion" | "range_contraction" | "dispersion" => OpClass::Volatility,
            _ => return None,
        })
    }

    fn families(self) -> &'static [Family] {
        match self {
            OpClass::Trend => &[Family::TsChange, Family::TsAggregation],
            OpClass::Relation => &[Family::TsRelation],
            OpClass::Level => &[Family::CrossSectional],
            OpClass::Threshold => &[Family::ConditionalLogical],
            OpClass::Slope => &[Family::Regression],
            OpClass::Oscillator => &[Family::Technical],
            OpClass::Volatility => &[Family::TsAggregation],
        }
    }
}

fn kind_variables(kind: VarKind) -> &'static [Variable] {
    match kind {
        VarKind::Price => &[Variable::Open, Variable::High, Variable::Low, Variable::Close],
        VarKind::Volume => &[Variable::Volume],
        VarKind::Return => &[Variable::Close, Variable::Return],
    }
}

/// Range rule for one integer parameter kind. `advised` values are hints for
/// the generator and are never enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRule {
    pub min: u32,
    pub max: Option<u32>,
    pub advised: Vec<u32>,
}

impl ParamRule {
    pub fn admits(&self, v: f64) -> bool {
        v >= self.min as f64 && self.max.is_none_or(|m| v <= m as f64)
    }
}

/// Gamma: what a generated factor may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintFields")]
pub struct ConstraintSet {
    pub allowed_variables: BTreeSet<Variable>,
    pub operator_families: BTreeSet<Family>,
    pub parameter_constraints: BTreeMap<ParamKind, ParamRule>,
    pub direction: Prediction,
}

#[derive(Deserialize)]
struct ConstraintFields {
    allowed_variables: BTreeSet<Variable>,
    operator_families: BTreeSet<Family>,
    parameter_constraints: BTreeMap<ParamKind, ParamRule>,
    direction: Prediction,
}

impl TryFrom<ConstraintFields> for ConstraintSet {
    type Error = LogicError;

    fn try_from(f: ConstraintFields) -> Result<Self> {
        if f.allowed_variables.is_empty() {
            return Err(LogicError::Invalid("allowed_variables must be non-empty".into()));
        }
        let mut families = f.operator_families;
        families.insert(Family::Arithmetic);
        families.insert(Family::Mathematical);
        Ok(ConstraintSet {
            allowed_variables: f.allowed_variables,
            operator_families: families,
            parameter_constraints: f.parameter_constraints,
            direction: f.direction,
        })
    }
}

impl ConstraintSet {
    pub fn admits_family(&self, family: Family) -> bool {
        matches!(family, Family::Arithmetic | Family::Mathematical) || self.operator_families.contains(&family)
    }

    pub fn direction_text(&self) -> String {
        let sign = match self.direction.d {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        };
        format!(
            "prefer factors with {sign} IC against {} at horizon {} on the validation split",
            self.direction.y, self.direction.h
        )
    }

    /// The wire form handed to the factor generator.
    pub fn to_agent_json(&self) -> serde_json::Value {
        let params: serde_json::Map<String, serde_json::Value> = self
            .parameter_constraints
            .iter()
            .map(|(kind, rule)| {
                let mut text = match rule.max {
                    Some(max) => format!("integer in [{}, {max}]", rule.min),
                    None if rule.min == 1 => "positive integer".to_string(),
                    None => format!("integer >= {}", rule.min),
                };
                if !rule.advised.is_empty() {
                    let list: Vec<String> = rule.advised.iter().map(u32::to_string).collect();
                    text.push_str(&format!(", advised near {}", list.join("/")));
                }
                (kind.name().to_string(), json!(text))
            })
            .collect();
        json!({
            "allowed_variables": self.allowed_variables.iter().map(|v| v.name()).collect::<Vec<_>>(),
            "operator_families": self.operator_families.iter().map(|f| f.name()).collect::<Vec<_>>(),
            "parameter_constraints": params,
            "direction_constraint": self.direction_text(),
        })
    }
}

/// Applies the fixed rule table. Pure: equal inputs give equal outputs.
pub fn compile(h: &MarketLogicStruct) -> Result<ConstraintSet> {
    let mut variables = BTreeSet::new();
    let mut families = BTreeSet::from([Family::Arithmetic, Family::Mathematical]);
    let mut kinds = BTreeSet::new();
    let mut windows = BTreeSet::new();
    for p in h.predicates() {
        let class = OpClass::of(&p.op).ok_or_else(|| LogicError::Compile {
            predicate: p.id.clone(),
            message: format!("unrecognized predicate op {:?}", p.op),
        })?;
        let kind = p.v.kind();
        kinds.insert(kind);
        variables.extend(kind_variables(kind));
        families.extend(class.families());
        windows.insert(p.w);
    }
    if variables.is_empty() {
        return Err(LogicError::Compile { predicate: "-".into(), message: "logic has no predicates".into() });
    }
    if windows.iter().any(|w| *w > 1) {
        families.insert(Family::SmoothingDecay);
    }
    // Conditions coupling different kinds of variable call for co-movement
    // and cross-sectional comparison operators.
    if kinds.len() >= 2 {
        families.insert(Family::TsRelation);
        families.insert(Family::CrossSectional);
    }
    let advised: Vec<u32> = windows.into_iter().collect();
    let rule = |advised: Vec<u32>| ParamRule { min: 1, max: None, advised };
    let parameter_constraints = BTreeMap::from([
        (ParamKind::Window, rule(advised.clone())),
        (ParamKind::Lag, rule(advised)),
        (ParamKind::Degree, rule(Vec::new())),
        (ParamKind::Modifier, rule(Vec::new())),
    ]);
    Ok(ConstraintSet {
        allowed_variables: variables,
        operator_families: families,
        parameter_constraints,
        direction: h.prediction().clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// (a) variable outside the whitelist
    Variable,
    /// (b) operator family not admitted
    OperatorFamily,
    /// (c) integer parameter out of range
    Parameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn summary(&self) -> String {
        self.violations.iter().map(|v| format!("{}: {}", v.path, v.message)).collect::<Vec<_>>().join("; ")
    }
}

/// Enumerates every conformance violation. Direction is not checked here.
pub fn check(expr: &FactorExpr, gamma: &ConstraintSet) -> CheckReport {
    let mut violations = Vec::new();
    expr.root().walk(&mut Vec::new(), &mut |node, path| match node {
        Expr::Var(v) if !gamma.allowed_variables.contains(v) => violations.push(Violation {
            rule: Rule::Variable,
            path: format_path(path),
            message: format!("variable {v} is not allowed"),
        }),
        Expr::Call { op, args } => {
            if !gamma.admits_family(op.family()) {
                violations.push(Violation {
                    rule: Rule::OperatorFamily,
                    path: format_path(path),
                    message: format!("{op} belongs to family {} which is not allowed", op.family()),
                });
            }
            for (i, (slot, arg)) in op.slots().iter().zip(args).enumerate() {
                let (Slot::Param(kind), Expr::Num(v)) = (slot, arg) else { continue };
                let Some(rule) = gamma.parameter_constraints.get(kind) else { continue };
                if kind.is_integer() && !rule.admits(*v) {
                    let mut at = path.to_vec();
                    at.push(i);
                    violations.push(Violation {
                        rule: Rule::Parameter,
                        path: format_path(&at),
                        message: format!("{op} {} {v} outside [{}, {}]", kind.name(), rule.min, max_text(rule.max)),
                    });
                }
            }
        }
        _ => {}
    });
    CheckReport { ok: violations.is_empty(), violations }
}

fn max_text(max: Option<u32>) -> String {
    max.map_or_else(|| "inf".to_string(), |m| m.to_string())
}
