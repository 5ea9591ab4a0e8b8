//! Agent templates and the placeholder-schema validator shared by every
//! backend.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentName {
    FormulaStructureAgent,
    FinancialSemanticsMappingAgent,
    MarketLogicAbstractionAgent,
    LogicToFinanceConstraintAgent,
    FactorExpressionGeneratorAgent,
    FactorPerformanceFeedbackAgent,
    MarketLogicGeneratorAgent,
    MarketLogicRefinementDirectionAgent,
}

impl AgentName {
    pub const ALL: [AgentName; 8] = [
        AgentName::FormulaStructureAgent,
        AgentName::FinancialSemanticsMappingAgent,
        AgentName::MarketLogicAbstractionAgent,
        AgentName::LogicToFinanceConstraintAgent,
        AgentName::FactorExpressionGeneratorAgent,
        AgentName::FactorPerformanceFeedbackAgent,
        AgentName::MarketLogicGeneratorAgent,
        AgentName::MarketLogicRefinementDirectionAgent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentName::FormulaStructureAgent => "FormulaStructureAgent",
            AgentName::FinancialSemanticsMappingAgent => "FinancialSemanticsMappingAgent",
            AgentName::MarketLogicAbstractionAgent => "MarketLogicAbstractionAgent",
            AgentName::LogicToFinanceConstraintAgent => "LogicToFinanceConstraintAgent",
            AgentName::FactorExpressionGeneratorAgent => "FactorExpressionGeneratorAgent",
            AgentName::FactorPerformanceFeedbackAgent => "FactorPerformanceFeedbackAgent",
            AgentName::MarketLogicGeneratorAgent => "MarketLogicGeneratorAgent",
            AgentName::MarketLogicRefinementDirectionAgent => "MarketLogicRefinementDirectionAgent",
        }
    }

    pub fn template(self) -> &'static Template {
        &templates()[self as usize]
    }
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentName::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown agent {s:?}"))
    }
}

/// Prompt text plus the placeholder schemas for one agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Template {
    pub system: String,
    pub instruction: String,
    pub input_schema: Value,
    pub output_schema: Value,
}

const TEMPLATE_SOURCE: &str = include_str!("../../templates/agents.json");

fn templates() -> &'static [Template] {
    static CELL: OnceLock<Vec<Template>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut all: Map<String, Value> = serde_json::from_str(TEMPLATE_SOURCE).expect("embedded templates are JSON");
        AgentName::ALL
            .iter()
            .map(|a| {
                let t = all.remove(a.as_str()).unwrap_or_else(|| panic!("template for {a} is embedded"));
                serde_json::from_value(t).expect("template has the four fields")
            })
            .collect()
    })
}

/// A schema violation at a JSON path such as `factors[1].expression`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn check_placeholder(placeholder: &str, v: &Value, path: &str) -> Result<(), SchemaViolation> {
    let fail = |message: String| Err(SchemaViolation { path: path.to_string(), message });
    let inner = placeholder.strip_prefix('<').and_then(|s| s.strip_suffix('>'));
    let Some(inner) = inner else {
        // literal descriptive text: any string
        return if v.is_string() { Ok(()) } else { fail(format!("expected string, found {}", type_name(v))) };
    };
    if inner == "+1|-1" {
        let ok = match v {
            Value::Number(n) => n.as_i64().is_some_and(|i| i == 1 || i == -1),
            Value::String(s) => matches!(s.trim(), "+1" | "-1" | "1"),
            _ => false,
        };
        return if ok { Ok(()) } else { fail(format!("expected +1 or -1, found {v}")) };
    }
    if inner.contains('|') {
        let options: Vec<&str> = inner.split('|').collect();
        return match v.as_str() {
            Some(s) if options.contains(&s) => Ok(()),
            _ => fail(format!("expected one of {options:?}, found {v}")),
        };
    }
    let alternatives: Vec<&str> = inner.split(" or ").map(str::trim).collect();
    let matches_one = |alt: &str| match alt {
        "string" => v.is_string(),
        "int" => v.as_i64().is_some() || v.as_u64().is_some(),
        "float" => v.is_number(),
        "object" => v.is_object(),
        "null" => v.is_null(),
        // e.g. "C or B field": free text
        _ => v.is_string(),
    };
    if alternatives.iter().any(|a| matches_one(a)) {
        Ok(())
    } else {
        fail(format!("expected {}, found {}", alternatives.join(" or "), type_name(v)))
    }
}

fn check_value(schema: &Value, v: &Value, path: &str) -> Result<(), SchemaViolation> {
    match schema {
        Value::String(p) => check_placeholder(p, v, path),
        Value::Array(items) => {
            let Some(arr) = v.as_array() else {
                return Err(SchemaViolation { path: path.into(), message: format!("expected array, found {}", type_name(v)) });
            };
            let item = items.first().unwrap_or(&Value::Null);
            for (i, x) in arr.iter().enumerate() {
                check_value(item, x, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        Value::Object(fields) => {
            let Some(obj) = v.as_object() else {
                return Err(SchemaViolation { path: path.into(), message: format!("expected object, found {}", type_name(v)) });
            };
            for (key, sub) in fields {
                match obj.get(key) {
                    Some(x) => check_value(sub, x, &join(path, key))?,
                    None => {
                        return Err(SchemaViolation { path: join(path, key), message: "required field is missing".into() })
                    }
                }
            }
            if let Some(extra) = obj.keys().find(|k| !fields.contains_key(*k)) {
                return Err(SchemaViolation { path: join(path, extra), message: "field is not in the schema".into() });
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Field-for-field check of `value` against a placeholder schema. Every
/// schema key is required and unknown keys are rejected.
pub fn validate(schema: &Value, value: &Value) -> Result<(), SchemaViolation> {
    check_value(schema, value, "")
}
