//! The fixed operator library: every operator's family, signature and
//! parameter slots. Validation, evaluation, lookback analysis and constraint
//! checking all dispatch on [`Op`] and read their metadata from here.

use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

/// Operator families. The first six are the coarse DSL families; the rest are
/// the concrete groups of the operations library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Arithmetic,
    CrossSectional,
    TsAggregation,
    TsChange,
    TsRelation,
    SmoothingDecay,
    ConditionalLogical,
    Regression,
    Technical,
    Mathematical,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Arithmetic,
        Family::CrossSectional,
        Family::TsAggregation,
        Family::TsChange,
        Family::TsRelation,
        Family::SmoothingDecay,
        Family::ConditionalLogical,
        Family::Regression,
        Family::Technical,
        Family::Mathematical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Arithmetic => "arithmetic",
            Family::CrossSectional => "cross_sectional",
            Family::TsAggregation => "ts_aggregation",
            Family::TsChange => "ts_change",
            Family::TsRelation => "ts_relation",
            Family::SmoothingDecay => "smoothing_decay",
            Family::ConditionalLogical => "conditional_logical",
            Family::Regression => "regression",
            Family::Technical => "technical",
            Family::Mathematical => "mathematical",
        }
    }

    pub fn from_name(name: &str) -> Option<Family> {
        let norm = name.trim().to_ascii_lowercase().replace(['-', ' ', '/'], "_");
        Family::ALL.into_iter().find(|f| f.name() == norm).or(match norm.as_str() {
            "time_series_aggregation" => Some(Family::TsAggregation),
            "time_series_change" => Some(Family::TsChange),
            "time_series_relation" => Some(Family::TsRelation),
            "smoothing" | "decay" => Some(Family::SmoothingDecay),
            "conditional" | "logical" => Some(Family::ConditionalLogical),
            _ => None,
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What an argument position accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// Any series-valued sub-expression.
    Series,
    /// Regressor of REGBETA/REGRESI: a series or `SEQUENCE(n)`.
    Regressor,
    Param(ParamKind),
}

/// Kinds of literal parameters. All but `Quantile` are integers >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Window,
    Lag,
    Degree,
    Modifier,
    Quantile,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] =
        [ParamKind::Window, ParamKind::Lag, ParamKind::Degree, ParamKind::Modifier, ParamKind::Quantile];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Window => "window",
            ParamKind::Lag => "lag",
            ParamKind::Degree => "degree",
            ParamKind::Modifier => "modifier",
            ParamKind::Quantile => "quantile",
        }
    }

    pub fn is_integer(self) -> bool {
        self != ParamKind::Quantile
    }
}

macro_rules! operators {
    ($( $variant:ident => $name:literal, $family:ident, [$($slot:expr),*], $desc:literal; )*) => {
        /// Every operator of the DSL. Overloaded names (`MAX`, `MIN`,
        /// `PERCENTILE`) get one variant per arity.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum Op { $($variant),* }

        static SPECS: &[OpSpec] = &[
            $(OpSpec { op: Op::$variant, name: $name, family: Family::$family, slots: &[$($slot),*], description: $desc }),*
        ];
    };
}

use ParamKind::*;
use Slot::{Param as P, Regressor as R, Series as S};

operators! {
    Add => "ADD", Arithmetic, [S, S], "A + B";
    Sub => "SUB", Arithmetic, [S, S], "A - B";
    Mul => "MUL", Arithmetic, [S, S], "A * B";
    Div => "DIV", Arithmetic, [S, S], "A / B";
    Neg => "NEG", Arithmetic, [S], "-A";

    Rank => "RANK", CrossSectional, [S], "per-date rank of A scaled to [0, 1]";
    Zscore => "ZSCORE", CrossSectional, [S], "per-date z-score of A";
    CsMean => "MEAN", CrossSectional, [S], "per-date mean of A";
    CsStd => "STD", CrossSectional, [S], "per-date standard deviation of A";
    CsSkew => "SKEW", CrossSectional, [S], "per-date skewness of A";
    CsKurt => "KURT", CrossSectional, [S], "per-date excess kurtosis of A";
    CsMax => "MAX", CrossSectional, [S], "per-date maximum of A";
    CsMin => "MIN", CrossSectional, [S], "per-date minimum of A";
    CsMedian => "MEDIAN", CrossSectional, [S], "per-date median of A";
    CsPercentile => "PERCENTILE", CrossSectional, [S, P(Quantile)], "per-date q-quantile of A";

    Delta => "DELTA", TsChange, [S, P(Lag)], "A minus A n periods ago";
    Delay => "DELAY", TsChange, [S, P(Lag)], "A lagged by n periods";
    TsPctChange => "TS_PCTCHANGE", TsChange, [S, P(Lag)], "percentage change of A over p periods";

    TsMean => "TS_MEAN", TsAggregation, [S, P(Window)], "mean of A over the last n dates";
    TsSum => "TS_SUM", TsAggregation, [S, P(Window)], "sum of A over the last n dates";
    TsRank => "TS_RANK", TsAggregation, [S, P(Window)], "rank of the latest A within its n-window, in [0, 1]";
    TsZscore => "TS_ZSCORE", TsAggregation, [S, P(Window)], "z-score of the latest A within its n-window";
    TsMedian => "TS_MEDIAN", TsAggregation, [S, P(Window)], "median of A over the last n dates";
    TsMin => "TS_MIN", TsAggregation, [S, P(Window)], "minimum of A over the last n dates";
    TsMax => "TS_MAX", TsAggregation, [S, P(Window)], "maximum of A over the last n dates";
    TsArgmax => "TS_ARGMAX", TsAggregation, [S, P(Window)], "window position (0 = oldest) of the latest maximum";
    TsArgmin => "TS_ARGMIN", TsAggregation, [S, P(Window)], "window position (0 = oldest) of the latest minimum";
    TsQuantile => "TS_QUANTILE", TsAggregation, [S, P(Window), P(Quantile)], "rolling q-quantile of A over p dates";
    TsStd => "TS_STD", TsAggregation, [S, P(Window)], "standard deviation of A over the last n dates";
    TsVar => "TS_VAR", TsAggregation, [S, P(Window)], "variance of A over the last p dates";
    TsMad => "TS_MAD", TsAggregation, [S, P(Window)], "median absolute deviation of A over n dates";
    TsPercentile => "PERCENTILE", TsAggregation, [S, P(Quantile), P(Window)], "rolling q-quantile of A over p dates";
    HighDay => "HIGHDAY", TsAggregation, [S, P(Window)], "days since the maximum of A within n dates";
    LowDay => "LOWDAY", TsAggregation, [S, P(Window)], "days since the minimum of A within n dates";
    Sumac => "SUMAC", TsAggregation, [S, P(Window)], "cumulative sum of A over the last n dates";

    TsCorr => "TS_CORR", TsRelation, [S, S, P(Window)], "correlation of A and B over n dates";
    TsCovariance => "TS_COVARIANCE", TsRelation, [S, S, P(Window)], "covariance of A and B over n dates";

    Sma => "SMA", SmoothingDecay, [S, P(Window), P(Modifier)], "recursive average Y = (m*A + (n-m)*Y') / n";
    Wma => "WMA", SmoothingDecay, [S, P(Window)], "weighted average with weights 0.9^k, newest first";
    Ema => "EMA", SmoothingDecay, [S, P(Window)], "exponential average with alpha = 2 / (n + 1)";
    DecayLinear => "DECAYLINEAR", SmoothingDecay, [S, P(Window)], "linearly weighted average, weights 1..d oldest to newest";

    Prod => "PROD", Mathematical, [S, P(Window)], "product of A over the last n dates";
    Log => "LOG", Mathematical, [S], "natural logarithm";
    Sqrt => "SQRT", Mathematical, [S], "square root";
    Pow => "POW", Mathematical, [S, P(Degree)], "A raised to the integer power n";
    Sign => "SIGN", Mathematical, [S], "sign of A (-1, 0, 1)";
    Exp => "EXP", Mathematical, [S], "exponential";
    Abs => "ABS", Mathematical, [S], "absolute value";
    Max2 => "MAX", Mathematical, [S, S], "element-wise maximum of A and B";
    Min2 => "MIN", Mathematical, [S, S], "element-wise minimum of A and B";
    Inv => "INV", Mathematical, [S], "reciprocal 1 / A";
    Floor => "FLOOR", Mathematical, [S], "floor";

    Gt => "GT", ConditionalLogical, [S, S], "A > B as 0/1";
    Lt => "LT", ConditionalLogical, [S, S], "A < B as 0/1";
    Ge => "GE", ConditionalLogical, [S, S], "A >= B as 0/1";
    Le => "LE", ConditionalLogical, [S, S], "A <= B as 0/1";
    Eq => "EQ", ConditionalLogical, [S, S], "A == B as 0/1";
    Ne => "NE", ConditionalLogical, [S, S], "A != B as 0/1";
    And => "AND", ConditionalLogical, [S, S], "C1 && C2 as 0/1";
    Or => "OR", ConditionalLogical, [S, S], "C1 || C2 as 0/1";
    IfElse => "IFELSE", ConditionalLogical, [S, S, S], "C ? A : B, cell-wise";
    Count => "COUNT", ConditionalLogical, [S, P(Window)], "number of dates within n where C holds";
    SumIf => "SUMIF", ConditionalLogical, [S, P(Window), S], "sum of A over n dates where C holds";
    Filter => "FILTER", ConditionalLogical, [S, S], "A where C holds, 0 elsewhere";

    Sequence => "SEQUENCE", Regression, [P(Window)], "the sequence 1..n, only as regressor of REGBETA/REGRESI";
    RegBeta => "REGBETA", Regression, [S, R, P(Window)], "slope of A regressed on B over n dates";
    RegResi => "REGRESI", Regression, [S, R, P(Window)], "latest residual of A regressed on B over n dates";

    Rsi => "RSI", Technical, [S, P(Window)], "relative strength index over n changes, in [0, 100]";
    Macd => "MACD", Technical, [S, P(Window), P(Window)], "EMA(A, short) - EMA(A, long)";
    BbMiddle => "BB_MIDDLE", Technical, [S, P(Window)], "n-date mean of A";
    BbUpper => "BB_UPPER", Technical, [S, P(Window)], "middle band plus two standard deviations";
    BbLower => "BB_LOWER", Technical, [S, P(Window)], "middle band minus two standard deviations";
}

/// Catalogue metadata for one operator.
#[derive(Debug, Clone, Copy)]
pub struct OpSpec {
    pub op: Op,
    pub name: &'static str,
    pub family: Family,
    pub slots: &'static [Slot],
    pub description: &'static str,
}

impl OpSpec {
    pub fn arity(&self) -> usize {
        self.slots.len()
    }
}

impl Op {
    pub fn spec(self) -> &'static OpSpec {
        &SPECS[self as usize]
    }

    /// Canonical upper-case name (shared by arity overloads).
    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn family(self) -> Family {
        self.spec().family
    }

    pub fn slots(self) -> &'static [Slot] {
        self.spec().slots
    }

    /// Infix symbol for operators printed between their operands.
    pub fn infix(self) -> Option<&'static str> {
        Some(match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Gt => ">",
            Op::Lt => "<",
            Op::Ge => ">=",
            Op::Le => "<=",
            Op::Eq => "==",
            Op::Ne => "!=",
            Op::And => "&&",
            Op::Or => "||",
            _ => return None,
        })
    }

    /// Recursive smoothers carry state from the first observed date onwards,
    /// so their values depend on where the panel starts.
    pub fn is_recursive(self) -> bool {
        matches!(self, Op::Ema | Op::Sma | Op::Macd)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Read-only view over the operator table.
#[derive(Debug)]
pub struct OperatorCatalogue {
    entries: &'static [OpSpec],
}

static CATALOGUE: LazyLock<OperatorCatalogue> = LazyLock::new(|| {
    debug_assert!(SPECS.iter().enumerate().all(|(i, s)| s.op as usize == i));
    OperatorCatalogue { entries: SPECS }
});

pub fn catalogue() -> &'static OperatorCatalogue {
    &CATALOGUE
}

impl OperatorCatalogue {
    pub fn entries(&self) -> &'static [OpSpec] {
        self.entries
    }

    /// Operators callable by name in expression text (infix-only and
    /// negation entries excluded), deduplicated, in catalogue order.
    pub fn callable_names(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for s in self.entries {
            if is_function_syntax(s.op) && !seen.contains(&s.name) {
                seen.push(s.name);
            }
        }
        seen
    }

    /// Resolves a (case-insensitive, possibly aliased) function name and
    /// argument count. `Err(arities)` lists valid counts for a known name.
    pub fn lookup(&self, name: &str, argc: usize) -> Option<Result<Op, Vec<usize>>> {
        let upper = name.to_ascii_uppercase();
        let canonical = alias(&upper).unwrap_or(&upper);
        let candidates: Vec<&OpSpec> = self
            .entries
            .iter()
            .filter(|s| s.name == canonical && is_function_syntax(s.op))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        Some(
            candidates
                .iter()
                .find(|s| s.arity() == argc)
                .map(|s| s.op)
                .ok_or_else(|| candidates.iter().map(|s| s.arity()).collect()),
        )
    }

    pub fn ops_in_family(&self, family: Family) -> impl Iterator<Item = Op> + '_ {
        self.entries.iter().filter(move |s| s.family == family).map(|s| s.op)
    }

    /// Plain-text listing used in agent prompts.
    pub fn render_library(&self) -> String {
        let mut out = String::new();
        for fam in Family::ALL {
            out.push_str(&format!("[{fam}]\n"));
            for s in self.entries.iter().filter(|s| s.family == fam) {
                out.push_str(&format!("  {}: {}\n", signature(s), s.description));
            }
        }
        out.push_str("Variables: open, high, low, close, volume, return\n");
        out
    }
}

fn is_function_syntax(op: Op) -> bool {
    op.infix().is_none() && op != Op::Neg && op != Op::IfElse
}

fn alias(upper: &str) -> Option<&'static str> {
    Some(match upper {
        "TS_DELTA" => "DELTA",
        "TS_DELAY" => "DELAY",
        "TS_COV" => "TS_COVARIANCE",
        "TS_DECAY" | "DECAY_LINEAR" | "TS_DECAY_LINEAR" => "DECAYLINEAR",
        "TS_WMA" => "WMA",
        "TS_EMA" => "EMA",
        "TS_SMA" => "SMA",
        "TS_PROD" => "PROD",
        "TS_COUNT" => "COUNT",
        _ => return None,
    })
}

fn signature(s: &OpSpec) -> String {
    if let Some(sym) = s.op.infix() {
        return format!("A {sym} B");
    }
    match s.op {
        Op::Neg => return "-A".into(),
        Op::IfElse => return "(C) ? (A) : (B)".into(),
        _ => {}
    }
    let mut series = ['A', 'B', 'C'].into_iter();
    let args: Vec<String> = s
        .slots
        .iter()
        .map(|slot| match slot {
            Slot::Series | Slot::Regressor => series.next().unwrap_or('X').to_string(),
            Slot::Param(k) => match k {
                Window => "n",
                Lag => "n",
                Degree => "n",
                Modifier => "m",
                Quantile => "q",
            }
            .to_string(),
        })
        .collect();
    format!("{}({})", s.name, args.join(", "))
}
