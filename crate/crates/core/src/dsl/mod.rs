//! Factor expression language: operator catalogue, parser, evaluator.

mod ast;
mod catalogue;
mod eval;
mod parser;

pub use ast::{format_path, required_lookback, Expr, FactorExpr, Variable};
pub use catalogue::{catalogue, Family, Op, OpSpec, OperatorCatalogue, ParamKind, Slot};
pub use eval::{evaluate, ols, variable};
pub use parser::{parse, DslError};
