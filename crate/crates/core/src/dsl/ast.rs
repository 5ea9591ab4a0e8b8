use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::catalogue::{Op, ParamKind, Slot};

/// Market variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Open,
    High,
    Low,
    Close,
    Volume,
    /// close / DELAY(close, 1) - 1
    Return,
}

impl Variable {
    pub const ALL: [Variable; 6] =
        [Variable::Open, Variable::High, Variable::Low, Variable::Close, Variable::Volume, Variable::Return];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Open => "open",
            Variable::High => "high",
            Variable::Low => "low",
            Variable::Close => "close",
            Variable::Volume => "volume",
            Variable::Return => "return",
        }
    }

    pub fn from_name(name: &str) -> Option<Variable> {
        let lower = name.to_ascii_lowercase();
        let lower = lower.strip_prefix('$').unwrap_or(&lower);
        Variable::ALL.into_iter().find(|v| v.name() == lower)
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expression tree node. Literal parameters of operator calls are stored as
/// `Num` arguments in their catalogue position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Var(Variable),
    Num(f64),
    Call { op: Op, args: Vec<Expr> },
}

impl Expr {
    pub fn call(op: Op, args: Vec<Expr>) -> Expr {
        Expr::Call { op, args }
    }

    /// Integer value of a parameter argument (validated at construction).
    pub fn param(args: &[Expr], i: usize) -> usize {
        match &args[i] {
            Expr::Num(v) => *v as usize,
            other => panic!("argument {i} is not a literal parameter: {other:?}"),
        }
    }

    pub fn real_param(args: &[Expr], i: usize) -> f64 {
        match &args[i] {
            Expr::Num(v) => *v,
            other => panic!("argument {i} is not a literal parameter: {other:?}"),
        }
    }

    /// Pre-order walk handing each node and its location path to `f`.
    pub fn walk<'a>(&'a self, path: &mut Vec<usize>, f: &mut impl FnMut(&'a Expr, &[usize])) {
        f(self, path);
        if let Expr::Call { args, .. } = self {
            for (i, a) in args.iter().enumerate() {
                path.push(i);
                a.walk(path, f);
                path.pop();
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Call { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            _ => 0,
        }
    }
}

/// Renders a location path as `root.1.0`.
pub fn format_path(path: &[usize]) -> String {
    let mut s = String::from("root");
    for i in path {
        s.push('.');
        s.push_str(&i.to_string());
    }
    s
}

/// A validated factor expression.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorExpr {
    root: Expr,
}

impl FactorExpr {
    /// Wraps a tree after checking arity, parameter ranges, `SEQUENCE`
    /// placement and the presence of at least one market variable.
    pub fn new(root: Expr) -> Result<Self, String> {
        validate(&root, false)?;
        if variables_of(&root).is_empty() {
            return Err("expression must reference at least one market variable".into());
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn into_root(self) -> Expr {
        self.root
    }

    pub fn variables(&self) -> BTreeSet<Variable> {
        variables_of(&self.root)
    }

    /// Canonical names of all operators in the tree.
    pub fn list_operators(&self) -> BTreeSet<&'static str> {
        let mut out = BTreeSet::new();
        self.root.walk(&mut Vec::new(), &mut |e, _| {
            if let Expr::Call { op, .. } = e {
                out.insert(op.name());
            }
        });
        out
    }

    pub fn ops(&self) -> BTreeSet<Op> {
        let mut out = BTreeSet::new();
        self.root.walk(&mut Vec::new(), &mut |e, _| {
            if let Expr::Call { op, .. } = e {
                out.insert(*op);
            }
        });
        out
    }

    /// Wraps the expression in a negation, folding a leading one away.
    pub fn negated(&self) -> FactorExpr {
        match &self.root {
            Expr::Call { op: Op::Neg, args } => FactorExpr { root: args[0].clone() },
            other => FactorExpr { root: Expr::call(Op::Neg, vec![other.clone()]) },
        }
    }

    /// True when no recursive smoother appears (values then depend only on a
    /// bounded window of history).
    pub fn is_finite_memory(&self) -> bool {
        self.ops().iter().all(|op| !op.is_recursive())
    }

    pub fn uses_cross_section(&self) -> bool {
        self.ops().iter().any(|op| op.family() == super::catalogue::Family::CrossSectional)
    }
}

fn variables_of(e: &Expr) -> BTreeSet<Variable> {
    let mut out = BTreeSet::new();
    e.walk(&mut Vec::new(), &mut |n, _| {
        if let Expr::Var(v) = n {
            out.insert(*v);
        }
    });
    out
}

fn validate(e: &Expr, regressor_slot: bool) -> Result<(), String> {
    match e {
        Expr::Var(_) => Ok(()),
        Expr::Num(v) if v.is_finite() => Ok(()),
        Expr::Num(_) => Err("non-finite literal".into()),
        Expr::Call { op, args } => {
            let slots = op.slots();
            if args.len() != slots.len() {
                return Err(format!("{op} expects {} arguments, got {}", slots.len(), args.len()));
            }
            if *op == Op::Sequence && !regressor_slot {
                return Err("SEQUENCE(n) is only allowed as the regressor of REGBETA or REGRESI".into());
            }
            for (i, (slot, arg)) in slots.iter().zip(args).enumerate() {
                match slot {
                    Slot::Series => validate(arg, false)?,
                    Slot::Regressor => validate(arg, true)?,
                    Slot::Param(kind) => check_param(*op, i, *kind, arg)?,
                }
            }
            match op {
                Op::Sma => {
                    let (n, m) = (Expr::param(args, 1), Expr::param(args, 2));
                    if m > n {
                        return Err(format!("SMA modifier m = {m} must not exceed n = {n}"));
                    }
                }
                Op::Macd => {
                    let (s, l) = (Expr::param(args, 1), Expr::param(args, 2));
                    if s >= l {
                        return Err(format!("MACD short window {s} must be below long window {l}"));
                    }
                }
                Op::RegBeta | Op::RegResi => {
                    if let Expr::Call { op: Op::Sequence, args: seq } = &args[1] {
                        let (len, n) = (Expr::param(seq, 0), Expr::param(args, 2));
                        if len != n {
                            return Err(format!("SEQUENCE({len}) length must equal the regression window {n}"));
                        }
                    }
                }
                _ => {}
            }
            Ok(())
        }
    }
}

pub(crate) fn check_param(op: Op, i: usize, kind: ParamKind, arg: &Expr) -> Result<(), String> {
    let Expr::Num(v) = arg else {
        return Err(format!("{op} argument {} ({}) must be a literal", i + 1, kind.name()));
    };
    if kind.is_integer() {
        if v.fract() != 0.0 || *v < 1.0 || *v > u32::MAX as f64 {
            return Err(format!("{op} argument {} ({}) must be an integer >= 1, got {v}", i + 1, kind.name()));
        }
    } else if !(*v > 0.0 && *v < 1.0) {
        return Err(format!("{op} argument {} (quantile) must lie in (0, 1), got {v}", i + 1));
    }
    Ok(())
}

/// Minimal number of leading dates that are missing for any panel: window and
/// lag demands summed along the deepest path.
pub fn required_lookback(expr: &FactorExpr) -> usize {
    lookback(expr.root())
}

fn lookback(e: &Expr) -> usize {
    let Expr::Call { op, args } = e else {
        return match e {
            Expr::Var(Variable::Return) => 1,
            _ => 0,
        };
    };
    let inner = op
        .slots()
        .iter()
        .zip(args)
        .filter(|(s, _)| !matches!(s, Slot::Param(_)))
        .map(|(_, a)| lookback(a))
        .max()
        .unwrap_or(0);
    let window = |i: usize| Expr::param(args, i);
    inner
        + match op {
            Op::Delay | Op::Delta | Op::TsPctChange => window(1),
            Op::Rsi => window(1),
            Op::TsMean
            | Op::TsSum
            | Op::TsRank
            | Op::TsZscore
            | Op::TsMedian
            | Op::TsMin
            | Op::TsMax
            | Op::TsArgmax
            | Op::TsArgmin
            | Op::TsStd
            | Op::TsVar
            | Op::TsMad
            | Op::HighDay
            | Op::LowDay
            | Op::Sumac
            | Op::Wma
            | Op::DecayLinear
            | Op::Prod
            | Op::Count
            | Op::SumIf
            | Op::BbMiddle
            | Op::BbUpper
            | Op::BbLower => window(1) - 1,
            Op::TsQuantile => window(1) - 1,
            Op::TsPercentile => window(2) - 1,
            Op::TsCorr | Op::TsCovariance | Op::RegBeta | Op::RegResi => window(2) - 1,
            Op::Sequence => 0,
            _ => 0,
        }
}

/// Canonical text: function calls as `NAME(a, b)`, infix operators fully
/// parenthesized, conditionals as `(c ? a : b)`.
impl fmt::Display for FactorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(&self.root, f)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f)
    }
}

fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Var(v) => f.write_str(v.name()),
        Expr::Num(v) => write_num(*v, f),
        Expr::Call { op, args } => {
            if let Some(sym) = op.infix() {
                f.write_str("(")?;
                write_expr(&args[0], f)?;
                write!(f, " {sym} ")?;
                write_expr(&args[1], f)?;
                return f.write_str(")");
            }
            match op {
                Op::Neg => {
                    // `-2` reads back as a negative literal, so a negated
                    // literal keeps its own parentheses.
                    if matches!(args[0], Expr::Num(_)) {
                        f.write_str("-(")?;
                        write_expr(&args[0], f)?;
                        f.write_str(")")
                    } else {
                        f.write_str("-")?;
                        write_expr(&args[0], f)
                    }
                }
                Op::IfElse => {
                    f.write_str("(")?;
                    write_expr(&args[0], f)?;
                    f.write_str(" ? ")?;
                    write_expr(&args[1], f)?;
                    f.write_str(" : ")?;
                    write_expr(&args[2], f)?;
                    f.write_str(")")
                }
                _ => {
                    write!(f, "{}(", op.name())?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write_expr(a, f)?;
                    }
                    f.write_str(")")
                }
            }
        }
    }
}

fn write_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(f, "{}", v as i64)
    } else {
        write!(f, "{v}")
    }
}
