//! Shared test fixtures: random panels, a random program generator, a naive
//! reference evaluator for every operator, and brute-force metric oracles.
#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use factorlogic::matrix::Matrix;
use factorlogic::panel::Panel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub type Grid = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fin(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

fn present(v: f64) -> bool {
    v.is_finite()
}

// ---------------------------------------------------------------- panels

pub struct RefPanel {
    pub open: Grid,
    pub high: Grid,
    pub low: Grid,
    pub close: Grid,
    pub volume: Grid,
}

/// Tick-rounded random walks with scattered missing cells.
pub fn random_panel(r: &mut ChaCha8Rng, dates: usize, names: usize) -> (Panel, RefPanel) {
    let step = Normal::new(0.0, 0.02).unwrap();
    let mut grids: [Grid; 5] = std::array::from_fn(|_| vec![vec![f64::NAN; names]; dates]);
    for i in 0..names {
        let mut c: f64 = r.random_range(5.0..80.0);
        let base_v: f64 = r.random_range(1e4..1e6);
        for t in 0..dates {
            c *= 1.0 + step.sample(r);
            let close = (c * 100.0).round() / 100.0;
            let open = (close * (1.0 + step.sample(r) * 0.3) * 100.0).round() / 100.0;
            let high = open.max(close) + (r.random_range(0..20) as f64) / 100.0;
            let low = (open.min(close) - (r.random_range(0..20) as f64) / 100.0).max(0.01);
            let vol = (base_v * r.random_range(0.3..3.0) / 100.0).round() * 100.0;
            let absent = r.random_bool(0.03);
            for (f, v) in [open, high, low, close, vol].into_iter().enumerate() {
                if !absent && !r.random_bool(0.005) {
                    grids[f][t][i] = v;
                }
            }
        }
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let days: Vec<NaiveDate> = (0..dates).map(|t| start + Days::new(t as u64)).collect();
    let names_v: Vec<String> = (0..names).map(|i| format!("N{i:02}")).collect();
    let mats = grids.clone().map(|g| Matrix::from_row_vecs(&g));
    let panel = Panel::new(days, names_v, mats).unwrap();
    let [open, high, low, close, volume] = grids;
    (panel, RefPanel { open, high, low, close, volume })
}

// ---------------------------------------------------------------- programs

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Element-wise function of one series.
    Unary,
    /// Infix binary operator.
    Infix(&'static str),
    /// Function of two series.
    Binary,
    IfElse,
    CrossSection,
    /// Cross-sectional with a quantile.
    CsQuantile,
    Lag,
    Window,
    /// (series, window, quantile)
    WindowQuantile,
    /// (series, quantile, window)
    QuantileWindow,
    Degree,
    PairWindow,
    Sma,
    Macd,
    SumIf,
    Regression,
}

/// (internal key, rendered name, shape, family)
pub const OPS: &[(&str, &str, Shape, &str)] = &[
    ("ADD", "+", Shape::Infix("+"), "arithmetic"),
    ("SUB", "-", Shape::Infix("-"), "arithmetic"),
    ("MUL", "*", Shape::Infix("*"), "arithmetic"),
    ("DIV", "/", Shape::Infix("/"), "arithmetic"),
    ("NEG", "-", Shape::Unary, "arithmetic"),
    ("RANK", "RANK", Shape::CrossSection, "cross_sectional"),
    ("ZSCORE", "ZSCORE", Shape::CrossSection, "cross_sectional"),
    ("CSMEAN", "MEAN", Shape::CrossSection, "cross_sectional"),
    ("CSSTD", "STD", Shape::CrossSection, "cross_sectional"),
    ("CSSKEW", "SKEW", Shape::CrossSection, "cross_sectional"),
    ("CSKURT", "KURT", Shape::CrossSection, "cross_sectional"),
    ("CSMAX", "MAX", Shape::CrossSection, "cross_sectional"),
    ("CSMIN", "MIN", Shape::CrossSection, "cross_sectional"),
    ("CSMEDIAN", "MEDIAN", Shape::CrossSection, "cross_sectional"),
    ("CSPCT", "PERCENTILE", Shape::CsQuantile, "cross_sectional"),
    ("DELTA", "DELTA", Shape::Lag, "ts_change"),
    ("DELAY", "DELAY", Shape::Lag, "ts_change"),
    ("PCT", "TS_PCTCHANGE", Shape::Lag, "ts_change"),
    ("TS_MEAN", "TS_MEAN", Shape::Window, "ts_aggregation"),
    ("TS_SUM", "TS_SUM", Shape::Window, "ts_aggregation"),
    ("TS_RANK", "TS_RANK", Shape::Window, "ts_aggregation"),
    ("TS_ZSCORE", "TS_ZSCORE", Shape::Window, "ts_aggregation"),
    ("TS_MEDIAN", "TS_MEDIAN", Shape::Window, "ts_aggregation"),
    ("TS_MIN", "TS_MIN", Shape::Window, "ts_aggregation"),
    ("TS_MAX", "TS_MAX", Shape::Window, "ts_aggregation"),
    ("TS_ARGMAX", "TS_ARGMAX", Shape::Window, "ts_aggregation"),
    ("TS_ARGMIN", "TS_ARGMIN", Shape::Window, "ts_aggregation"),
    ("TS_QUANTILE", "TS_QUANTILE", Shape::WindowQuantile, "ts_aggregation"),
    ("TS_STD", "TS_STD", Shape::Window, "ts_aggregation"),
    ("TS_VAR", "TS_VAR", Shape::Window, "ts_aggregation"),
    ("TS_MAD", "TS_MAD", Shape::Window, "ts_aggregation"),
    ("TS_PCT", "PERCENTILE", Shape::QuantileWindow, "ts_aggregation"),
    ("HIGHDAY", "HIGHDAY", Shape::Window, "ts_aggregation"),
    ("LOWDAY", "LOWDAY", Shape::Window, "ts_aggregation"),
    ("SUMAC", "SUMAC", Shape::Window, "ts_aggregation"),
    ("TS_CORR", "TS_CORR", Shape::PairWindow, "ts_relation"),
    ("TS_COV", "TS_COVARIANCE", Shape::PairWindow, "ts_relation"),
    ("SMA", "SMA", Shape::Sma, "smoothing_decay"),
    ("WMA", "WMA", Shape::Window, "smoothing_decay"),
    ("EMA", "EMA", Shape::Window, "smoothing_decay"),
    ("DECAY", "DECAYLINEAR", Shape::Window, "smoothing_decay"),
    ("PROD", "PROD", Shape::Window, "mathematical"),
    ("LOG", "LOG", Shape::Unary, "mathematical"),
    ("SQRT", "SQRT", Shape::Unary, "mathematical"),
    ("POW", "POW", Shape::Degree, "mathematical"),
    ("SIGN", "SIGN", Shape::Unary, "mathematical"),
    ("EXP", "EXP", Shape::Unary, "mathematical"),
    ("ABS", "ABS", Shape::Unary, "mathematical"),
    ("MAX2", "MAX", Shape::Binary, "mathematical"),
    ("MIN2", "MIN", Shape::Binary, "mathematical"),
    ("INV", "INV", Shape::Unary, "mathematical"),
    ("FLOOR", "FLOOR", Shape::Unary, "mathematical"),
    ("GT", ">", Shape::Infix(">"), "conditional_logical"),
    ("LT", "<", Shape::Infix("<"), "conditional_logical"),
    ("GE", ">=", Shape::Infix(">="), "conditional_logical"),
    ("LE", "<=", Shape::Infix("<="), "conditional_logical"),
    ("EQ", "==", Shape::Infix("=="), "conditional_logical"),
    ("NE", "!=", Shape::Infix("!="), "conditional_logical"),
    ("AND", "&&", Shape::Infix("&&"), "conditional_logical"),
    ("OR", "||", Shape::Infix("||"), "conditional_logical"),
    ("IFELSE", "?", Shape::IfElse, "conditional_logical"),
    ("COUNT", "COUNT", Shape::Window, "conditional_logical"),
    ("SUMIF", "SUMIF", Shape::SumIf, "conditional_logical"),
    ("FILTER", "FILTER", Shape::Binary, "conditional_logical"),
    ("REGBETA", "REGBETA", Shape::Regression, "regression"),
    ("REGRESI", "REGRESI", Shape::Regression, "regression"),
    ("RSI", "RSI", Shape::Window, "technical"),
    ("MACD", "MACD", Shape::Macd, "technical"),
    ("BB_MIDDLE", "BB_MIDDLE", Shape::Window, "technical"),
    ("BB_UPPER", "BB_UPPER", Shape::Window, "technical"),
    ("BB_LOWER", "BB_LOWER", Shape::Window, "technical"),
];

#[derive(Debug, Clone)]
pub enum Node {
    Var(&'static str),
    Num(f64),
    Seq(usize),
    Call { key: &'static str, args: Vec<Node>, params: Vec<f64> },
}

const VARS: &[&str] = &["open", "high", "low", "close", "volume", "return"];
const QUANTILES: &[f64] = &[0.1, 0.25, 0.5, 0.75, 0.9];
const LITERALS: &[f64] = &[0.5, 1.0, 2.0, 3.5, 10.0];

fn spec(key: &str) -> (&'static str, Shape) {
    let (_, name, shape, _) = OPS.iter().find(|o| o.0 == key).expect("known key");
    (name, *shape)
}

fn leaf(r: &mut ChaCha8Rng) -> Node {
    if r.random_bool(0.15) {
        Node::Num(LITERALS[r.random_range(0..LITERALS.len())])
    } else {
        Node::Var(VARS[r.random_range(0..VARS.len())])
    }
}

/// A program with at most `depth` nested calls and the given operator at the
/// root.
pub fn program_with_root(r: &mut ChaCha8Rng, key: &'static str, depth: usize) -> Node {
    let sub = |r: &mut ChaCha8Rng| random_program(r, depth - 1);
    let (_, shape) = spec(key);
    let win = |r: &mut ChaCha8Rng| r.random_range(1..=8) as f64;
    let q = |r: &mut ChaCha8Rng| QUANTILES[r.random_range(0..QUANTILES.len())];
    let (args, params) = match shape {
        Shape::Unary | Shape::CrossSection => (vec![sub(r)], vec![]),
        Shape::Infix(_) | Shape::Binary => (vec![sub(r), sub(r)], vec![]),
        Shape::IfElse => (vec![sub(r), sub(r), sub(r)], vec![]),
        Shape::CsQuantile => (vec![sub(r)], vec![q(r)]),
        Shape::Lag => (vec![sub(r)], vec![r.random_range(1..=5) as f64]),
        Shape::Window => (vec![sub(r)], vec![win(r)]),
        Shape::WindowQuantile => (vec![sub(r)], vec![win(r), q(r)]),
        Shape::QuantileWindow => (vec![sub(r)], vec![q(r), win(r)]),
        Shape::Degree => (vec![sub(r)], vec![r.random_range(1..=3) as f64]),
        Shape::PairWindow => (vec![sub(r), sub(r)], vec![r.random_range(2..=8) as f64]),
        Shape::Sma => {
            let n = r.random_range(1..=8);
            (vec![sub(r)], vec![n as f64, r.random_range(1..=n) as f64])
        }
        Shape::Macd => {
            let s = r.random_range(1..=5);
            (vec![sub(r)], vec![s as f64, r.random_range(s + 1..=10) as f64])
        }
        Shape::SumIf => (vec![sub(r), sub(r)], vec![win(r)]),
        Shape::Regression => {
            let n = r.random_range(2..=8);
            let reg = if r.random_bool(0.5) { Node::Seq(n) } else { sub(r) };
            (vec![sub(r), reg], vec![n as f64])
        }
    };
    Node::Call { key, args, params }
}

pub fn random_program(r: &mut ChaCha8Rng, depth: usize) -> Node {
    if depth == 0 || r.random_bool(0.25) {
        return leaf(r);
    }
    let key = OPS[r.random_range(0..OPS.len())].0;
    program_with_root(r, key, depth)
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub fn render(n: &Node) -> String {
    match n {
        Node::Var(v) => v.to_string(),
        Node::Num(v) => fmt_num(*v),
        Node::Seq(k) => format!("SEQUENCE({k})"),
        Node::Call { key, args, params } => {
            let (name, shape) = spec(key);
            let a: Vec<String> = args.iter().map(render).collect();
            let p: Vec<String> = params.iter().map(|v| fmt_num(*v)).collect();
            match shape {
                Shape::Infix(sym) => format!("({} {sym} {})", a[0], a[1]),
                Shape::IfElse => format!("(({}) ? ({}) : ({}))", a[0], a[1], a[2]),
                Shape::Unary if *key == "NEG" => format!("(-({}))", a[0]),
                Shape::SumIf => format!("{name}({}, {}, {})", a[0], p[0], a[1]),
                Shape::Regression => format!("{name}({}, {}, {})", a[0], a[1], p[0]),
                _ => {
                    let all: Vec<String> = a.into_iter().chain(p).collect();
                    format!("{name}({})", all.join(", "))
                }
            }
        }
    }
}

pub fn has_var(n: &Node) -> bool {
    match n {
        Node::Var(_) => true,
        Node::Call { args, .. } => args.iter().any(has_var),
        _ => false,
    }
}

/// Draws until the program reads at least one market variable.
pub fn valid_program(r: &mut ChaCha8Rng, root: Option<&'static str>, depth: usize) -> Node {
    loop {
        let p = match root {
            Some(k) => program_with_root(r, k, depth),
            None => random_program(r, depth),
        };
        if has_var(&p) {
            return p;
        }
    }
}

pub fn depth(n: &Node) -> usize {
    match n {
        Node::Call { args, .. } => 1 + args.iter().map(depth).max().unwrap_or(0),
        _ => 0,
    }
}

pub fn keys(n: &Node, out: &mut Vec<&'static str>) {
    if let Node::Call { key, args, .. } = n {
        out.push(key);
        for a in args {
            keys(a, out);
        }
    }
}

// ---------------------------------------------------------------- reference

fn mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut s = 0.0;
    for x in xs {
        s += (x - m) * (x - m);
    }
    s / xs.len() as f64
}

fn cov(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut s = 0.0;
    for i in 0..xs.len() {
        s += (xs[i] - mx) * (ys[i] - my);
    }
    s / xs.len() as f64
}

fn corr(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if xs.len() < 2 || sxx <= 0.0 || syy <= 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Average rank (1-based) of `xs[k]` by counting.
pub fn brute_rank(xs: &[f64], k: usize) -> f64 {
    let less = xs.iter().filter(|x| **x < xs[k]).count();
    let equal = xs.iter().filter(|x| **x == xs[k]).count();
    less as f64 + (equal as f64 + 1.0) / 2.0
}

fn unit_rank(xs: &[f64], k: usize) -> f64 {
    if xs.len() == 1 {
        0.5
    } else {
        (brute_rank(xs, k) - 1.0) / (xs.len() as f64 - 1.0)
    }
}

fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi {
        s[lo]
    } else {
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    }
}

fn moment_ratio(xs: &[f64], k: i32) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let mk: f64 = xs.iter().map(|x| (x - m).powi(k)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return f64::NAN;
    }
    if k == 3 {
        mk / m2.powf(1.5)
    } else {
        mk / (m2 * m2) - 3.0
    }
}

fn latest_extreme_pos(w: &[f64], max: bool) -> usize {
    let mut best = 0;
    for i in 0..w.len() {
        let better = if max { w[i] >= w[best] } else { w[i] <= w[best] };
        if better {
            best = i;
        }
    }
    best
}

fn shape_of(g: &Grid) -> (usize, usize) {
    (g.len(), g[0].len())
}

fn cellwise(a: &Grid, f: impl Fn(f64) -> f64) -> Grid {
    a.iter().map(|row| row.iter().map(|x| fin(f(*x))).collect()).collect()
}

fn cellwise2(a: &Grid, b: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| fin(f(*x, *y))).collect()).collect()
}

fn cmp2(a: &Grid, b: &Grid, f: impl Fn(f64, f64) -> bool) -> Grid {
    cellwise2(a, b, |x, y| {
        if present(x) && present(y) {
            if f(x, y) {
                1.0
            } else {
                0.0
            }
        } else {
            f64::NAN
        }
    })
}

/// Per row: every present cell gets `f(present values, index within them)`.
fn per_row(a: &Grid, f: impl Fn(&[f64], usize) -> f64) -> Grid {
    a.iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().copied().filter(|v| present(*v)).collect();
            let mut k = 0;
            row.iter()
                .map(|v| {
                    if present(*v) {
                        k += 1;
                        fin(f(&vals, k - 1))
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect()
}

fn lagged(a: &Grid, lag: usize) -> Grid {
    let (n, m) = shape_of(a);
    (0..n).map(|t| if t >= lag { a[t - lag].clone() } else { vec![f64::NAN; m] }).collect()
}

/// Window of `n` dates ending at each t; needs every cell present.
fn windowed(a: &Grid, n: usize, f: impl Fn(&[f64]) -> f64) -> Grid {
    let (rows, cols) = shape_of(a);
    let mut out = vec![vec![f64::NAN; cols]; rows];
    for i in 0..cols {
        for t in 0..rows {
            if t + 1 < n {
                continue;
            }
            let w: Vec<f64> = (t + 1 - n..=t).map(|s| a[s][i]).collect();
            if w.iter().all(|v| present(*v)) {
                out[t][i] = fin(f(&w));
            }
        }
    }
    out
}

fn windowed2(a: &Grid, b: &Grid, n: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Grid {
    let (rows, cols) = shape_of(a);
    let mut out = vec![vec![f64::NAN; cols]; rows];
    for i in 0..cols {
        for t in 0..rows {
            if t + 1 < n {
                continue;
            }
            let x: Vec<f64> = (t + 1 - n..=t).map(|s| a[s][i]).collect();
            let y: Vec<f64> = (t + 1 - n..=t).map(|s| b[s][i]).collect();
            if x.iter().chain(&y).all(|v| present(*v)) {
                out[t][i] = fin(f(&x, &y));
            }
        }
    }
    out
}

fn recursion(a: &Grid, step: impl Fn(f64, f64) -> f64) -> Grid {
    let (rows, cols) = shape_of(a);
    let mut out = vec![vec![f64::NAN; cols]; rows];
    for i in 0..cols {
        let mut state: Option<f64> = None;
        for t in 0..rows {
            let x = a[t][i];
            if !present(x) {
                continue;
            }
            let next = fin(match state {
                None => x,
                Some(p) => step(p, x),
            });
            if present(next) {
                state = Some(next);
                out[t][i] = next;
            } else {
                state = None;
            }
        }
    }
    out
}

fn ema_ref(a: &Grid, n: usize) -> Grid {
    let alpha = 2.0 / (n as f64 + 1.0);
    recursion(a, |p, x| alpha * x + (1.0 - alpha) * p)
}

fn regress(ys: &[f64], xs: &[f64], resid: bool) -> f64 {
    let vx = var(xs);
    if !(vx > 0.0) {
        return f64::NAN;
    }
    let beta = cov(xs, ys) / vx;
    let alpha = mean(ys) - beta * mean(xs);
    if resid {
        ys[ys.len() - 1] - (alpha + beta * xs[xs.len() - 1])
    } else {
        beta
    }
}

pub fn reference(n: &Node, p: &RefPanel) -> Grid {
    let (rows, cols) = shape_of(&p.close);
    match n {
        Node::Num(v) => vec![vec![*v; cols]; rows],
        Node::Var(v) => match *v {
            "open" => p.open.clone(),
            "high" => p.high.clone(),
            "low" => p.low.clone(),
            "close" => p.close.clone(),
            "volume" => p.volume.clone(),
            "return" => cellwise2(&p.close, &lagged(&p.close, 1), |c, q| c / q - 1.0),
            other => panic!("unknown variable {other}"),
        },
        Node::Seq(_) => unreachable!("SEQUENCE is handled by its regression parent"),
        Node::Call { key, args, params } => {
            let a = || reference(&args[0], p);
            let b = || reference(&args[1], p);
            let w = |i: usize| params[i] as usize;
            match *key {
                "ADD" => cellwise2(&a(), &b(), |x, y| x + y),
                "SUB" => cellwise2(&a(), &b(), |x, y| x - y),
                "MUL" => cellwise2(&a(), &b(), |x, y| x * y),
                "DIV" => cellwise2(&a(), &b(), |x, y| x / y),
                "NEG" => cellwise(&a(), |x| -x),
                "GT" => cmp2(&a(), &b(), |x, y| x > y),
                "LT" => cmp2(&a(), &b(), |x, y| x < y),
                "GE" => cmp2(&a(), &b(), |x, y| x >= y),
                "LE" => cmp2(&a(), &b(), |x, y| x <= y),
                "EQ" => cmp2(&a(), &b(), |x, y| x == y),
                "NE" => cmp2(&a(), &b(), |x, y| x != y),
                "AND" => cmp2(&a(), &b(), |x, y| x != 0.0 && y != 0.0),
                "OR" => cmp2(&a(), &b(), |x, y| x != 0.0 || y != 0.0),
                "IFELSE" => {
                    let (c, x, y) = (a(), b(), reference(&args[2], p));
                    (0..rows)
                        .map(|t| {
                            (0..cols)
                                .map(|i| {
                                    if !present(c[t][i]) {
                                        f64::NAN
                                    } else if c[t][i] != 0.0 {
                                        x[t][i]
                                    } else {
                                        y[t][i]
                                    }
                                })
                                .collect()
                        })
                        .collect()
                }
                "FILTER" => cellwise2(&a(), &b(), |x, c| {
                    if !present(c) {
                        f64::NAN
                    } else if c != 0.0 {
                        x
                    } else if present(x) {
                        0.0
                    } else {
                        f64::NAN
                    }
                }),
                "COUNT" => windowed(&a(), w(0), |v| v.iter().filter(|x| **x != 0.0).count() as f64),
                "SUMIF" => windowed2(&a(), &b(), w(0), |x, c| {
                    let mut s = 0.0;
                    for k in 0..x.len() {
                        if c[k] != 0.0 {
                            s += x[k];
                        }
                    }
                    s
                }),

                "RANK" => per_row(&a(), unit_rank),
                "ZSCORE" => per_row(&a(), |v, k| {
                    if v.len() < 2 {
                        return 0.0;
                    }
                    let (mu, sd) = (mean(v), var(v).sqrt());
                    if !(sd > 64.0 * f64::EPSILON * mu.abs().max(f64::MIN_POSITIVE)) {
                        0.0
                    } else {
                        (v[k] - mu) / sd
                    }
                }),
                "CSMEAN" => per_row(&a(), |v, _| mean(v)),
                "CSSTD" => per_row(&a(), |v, _| var(v).sqrt()),
                "CSSKEW" => per_row(&a(), |v, _| moment_ratio(v, 3)),
                "CSKURT" => per_row(&a(), |v, _| moment_ratio(v, 4)),
                "CSMAX" => per_row(&a(), |v, _| v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                "CSMIN" => per_row(&a(), |v, _| v.iter().copied().fold(f64::INFINITY, f64::min)),
                "CSMEDIAN" => per_row(&a(), |v, _| quantile(v, 0.5)),
                "CSPCT" => per_row(&a(), |v, _| quantile(v, params[0])),

                "DELAY" => lagged(&a(), w(0)),
                "DELTA" => {
                    let x = a();
                    cellwise2(&x, &lagged(&x, w(0)), |now, then| now - then)
                }
                "PCT" => {
                    let x = a();
                    cellwise2(&x, &lagged(&x, w(0)), |now, then| now / then - 1.0)
                }

                "TS_MEAN" | "BB_MIDDLE" => windowed(&a(), w(0), mean),
                "TS_SUM" | "SUMAC" => windowed(&a(), w(0), |v| v.iter().sum()),
                "TS_RANK" => windowed(&a(), w(0), |v| unit_rank(v, v.len() - 1)),
                "TS_ZSCORE" => windowed(&a(), w(0), |v| (v[v.len() - 1] - mean(v)) / var(v).sqrt()),
                "TS_MEDIAN" => windowed(&a(), w(0), |v| quantile(v, 0.5)),
                "TS_MIN" => windowed(&a(), w(0), |v| v.iter().copied().fold(f64::INFINITY, f64::min)),
                "TS_MAX" => windowed(&a(), w(0), |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                "TS_ARGMAX" => windowed(&a(), w(0), |v| latest_extreme_pos(v, true) as f64),
                "TS_ARGMIN" => windowed(&a(), w(0), |v| latest_extreme_pos(v, false) as f64),
                "HIGHDAY" => windowed(&a(), w(0), |v| (v.len() - 1 - latest_extreme_pos(v, true)) as f64),
                "LOWDAY" => windowed(&a(), w(0), |v| (v.len() - 1 - latest_extreme_pos(v, false)) as f64),
                "TS_QUANTILE" => windowed(&a(), w(0), |v| quantile(v, params[1])),
                "TS_PCT" => windowed(&a(), w(1), |v| quantile(v, params[0])),
                "TS_STD" => windowed(&a(), w(0), |v| var(v).sqrt()),
                "TS_VAR" => windowed(&a(), w(0), var),
                "TS_MAD" => windowed(&a(), w(0), |v| {
                    let med = quantile(v, 0.5);
                    let dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
                    quantile(&dev, 0.5)
                }),
                "BB_UPPER" => windowed(&a(), w(0), |v| mean(v) + 2.0 * var(v).sqrt()),
                "BB_LOWER" => windowed(&a(), w(0), |v| mean(v) - 2.0 * var(v).sqrt()),
                "PROD" => windowed(&a(), w(0), |v| v.iter().product()),

                "TS_CORR" => windowed2(&a(), &b(), w(0), corr),
                "TS_COV" => windowed2(&a(), &b(), w(0), cov),

                "EMA" => ema_ref(&a(), w(0)),
                "SMA" => {
                    let (n, m) = (params[0], params[1]);
                    recursion(&a(), move |prev, x| (m * x + (n - m) * prev) / n)
                }
                "MACD" => {
                    let x = a();
                    cellwise2(&ema_ref(&x, w(0)), &ema_ref(&x, w(1)), |s, l| s - l)
                }
                "WMA" => {
                    let n = w(0);
                    let raw: Vec<f64> = (0..n).map(|j| 0.9f64.powi((n - j) as i32)).collect();
                    let total: f64 = raw.iter().sum();
                    windowed(&a(), n, |v| v.iter().zip(&raw).map(|(x, k)| x * (k / total)).sum())
                }
                "DECAY" => {
                    let n = w(0);
                    let total = (n * (n + 1)) as f64 / 2.0;
                    windowed(&a(), n, |v| v.iter().enumerate().map(|(j, x)| x * ((j + 1) as f64 / total)).sum())
                }
                "RSI" => {
                    let n = w(0);
                    windowed(&a(), n + 1, |v| {
                        let (mut g, mut l) = (0.0, 0.0);
                        for k in 1..v.len() {
                            let d = v[k] - v[k - 1];
                            if d > 0.0 {
                                g += d;
                            } else {
                                l -= d;
                            }
                        }
                        let (g, l) = (g / n as f64, l / n as f64);
                        100.0 * (g / (g + l))
                    })
                }

                "LOG" => cellwise(&a(), |x| if x > 0.0 { x.ln() } else { f64::NAN }),
                "SQRT" => cellwise(&a(), |x| if x >= 0.0 { x.sqrt() } else { f64::NAN }),
                "POW" => {
                    let k = params[0] as i32;
                    cellwise(&a(), |x| x.powi(k))
                }
                "SIGN" => cellwise(&a(), |x| {
                    if !present(x) {
                        f64::NAN
                    } else if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
                "EXP" => cellwise(&a(), f64::exp),
                "ABS" => cellwise(&a(), f64::abs),
                "MAX2" => cellwise2(&a(), &b(), |x, y| if present(x) && present(y) { x.max(y) } else { f64::NAN }),
                "MIN2" => cellwise2(&a(), &b(), |x, y| if present(x) && present(y) { x.min(y) } else { f64::NAN }),
                "INV" => cellwise(&a(), |x| 1.0 / x),
                "FLOOR" => cellwise(&a(), f64::floor),

                "REGBETA" | "REGRESI" => {
                    let resid = *key == "REGRESI";
                    let n = w(0);
                    let y = a();
                    match &args[1] {
                        Node::Seq(_) => {
                            let seq: Vec<f64> = (1..=n).map(|k| k as f64).collect();
                            windowed(&y, n, |v| regress(v, &seq, resid))
                        }
                        other => windowed2(&y, &reference(other, p), n, |v, x| regress(v, x, resid)),
                    }
                }
                other => panic!("no reference for {other}"),
            }
        }
    }
}

/// Both missing, or both present and within `rel` relative to
/// max(1, |a|, |b|).
pub fn agree(engine: &Matrix, oracle: &Grid, rel: f64) -> Result<(), String> {
    for (t, row) in oracle.iter().enumerate() {
        for (i, &o) in row.iter().enumerate() {
            let e = engine.raw(t, i);
            match (e.is_finite(), o.is_finite()) {
                (false, false) => {}
                (true, true) => {
                    let scale = 1.0f64.max(e.abs()).max(o.abs());
                    if (e - o).abs() > rel * scale {
                        return Err(format!("cell ({t}, {i}): engine {e} vs oracle {o}"));
                    }
                }
                _ => return Err(format!("cell ({t}, {i}): missingness differs (engine {e}, oracle {o})")),
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

/// Spearman correlation from brute-force average ranks and the textbook
/// Pearson formula.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let rx: Vec<f64> = (0..n).map(|k| brute_rank(x, k)).collect();
    let ry: Vec<f64> = (0..n).map(|k| brute_rank(y, k)).collect();
    let (mx, my) = (rx.iter().sum::<f64>() / n as f64, ry.iter().sum::<f64>() / n as f64);
    let num: f64 = (0..n).map(|k| (rx[k] - mx) * (ry[k] - my)).sum();
    let dx: f64 = rx.iter().map(|r| (r - mx).powi(2)).sum();
    let dy: f64 = ry.iter().map(|r| (r - my).powi(2)).sum();
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}

/// Peak-to-trough fall computed over every (peak, later trough) pair.
pub fn brute_mdd(equity: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..equity.len() {
        for j in i..equity.len() {
            if equity[i] > 0.0 {
                worst = worst.max((equity[i] - equity[j]) / equity[i]);
            }
        }
    }
    -worst
}

pub fn pop_std(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

// ---------------------------------------------------------------- suites

pub struct OracleRun {
    pub programs: usize,
    pub informative: usize,
    pub families: std::collections::BTreeSet<&'static str>,
    pub ops_used: usize,
    pub failures: Vec<String>,
    pub elapsed: std::time::Duration,
}

/// Random programs of depth <= 4 on 60 x 30 panels, renewed every 50
/// programs. The first pass roots one program at every operator.
pub fn operator_oracle(seed: u64, programs: usize) -> OracleRun {
    let started = std::time::Instant::now();
    let mut r = rng(seed);
    let mut families = std::collections::BTreeSet::new();
    let mut used_ops = std::collections::BTreeSet::new();
    let mut failures = Vec::new();
    let mut informative = 0;
    let (mut panel, mut oracle_panel) = random_panel(&mut r, 60, 30);
    for k in 0..programs {
        if k % 50 == 0 && k > 0 {
            (panel, oracle_panel) = random_panel(&mut r, 60, 30);
        }
        let prog = valid_program(&mut r, OPS.get(k).map(|o| o.0), 4);
        let text = render(&prog);
        if depth(&prog) > 4 {
            failures.push(format!("{text}: depth {}", depth(&prog)));
        }
        let expr = match factorlogic::dsl::parse(&text) {
            Ok(e) => e,
            Err(e) => {
                failures.push(format!("{text}: {e}"));
                continue;
            }
        };
        let mut used = Vec::new();
        keys(&prog, &mut used);
        for key in used {
            families.insert(OPS.iter().find(|o| o.0 == key).unwrap().3);
            used_ops.insert(key);
        }
        let got = factorlogic::dsl::evaluate(&expr, &panel);
        if got.count_missing() < got.rows() * got.cols() {
            informative += 1;
        }
        if let Err(e) = agree(&got, &reference(&prog, &oracle_panel), 1e-9) {
            failures.push(format!("{text}: {e}"));
        }
    }
    OracleRun { programs, informative, families, ops_used: used_ops.len(), failures, elapsed: started.elapsed() }
}
