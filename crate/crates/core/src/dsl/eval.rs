//! Evaluates a validated expression over a panel, producing one value per
//! (date, instrument). Numeric trouble never aborts evaluation: a cell that
//! would be non-finite, or that touches a missing input, is missing.

use crate::matrix::{clean, is_missing, Matrix, MISSING};
use crate::panel::{Field, Panel};
use crate::stats;

use super::ast::{Expr, FactorExpr, Variable};
use super::catalogue::Op;

pub fn evaluate(expr: &FactorExpr, panel: &Panel) -> Matrix {
    eval(expr.root(), panel)
}

/// Evaluates a raw tree. The tree must satisfy the `FactorExpr` invariants.
pub(crate) fn eval(e: &Expr, panel: &Panel) -> Matrix {
    let (rows, cols) = panel.shape();
    match e {
        Expr::Num(v) => Matrix::filled(rows, cols, *v),
        Expr::Var(v) => variable(*v, panel),
        Expr::Call { op, args } => call(*op, args, panel),
    }
}

pub fn variable(v: Variable, panel: &Panel) -> Matrix {
    match v {
        Variable::Open => panel.field(Field::Open).clone(),
        Variable::High => panel.field(Field::High).clone(),
        Variable::Low => panel.field(Field::Low).clone(),
        Variable::Close => panel.field(Field::Close).clone(),
        Variable::Volume => panel.field(Field::Volume).clone(),
        Variable::Return => {
            let close = panel.close();
            let prev = shift(close, 1);
            close.zip_map(&prev, |c, p| c / p - 1.0)
        }
    }
}

fn truth(v: f64) -> f64 {
    if is_missing(v) {
        MISSING
    } else if v != 0.0 {
        1.0
    } else {
        0.0
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn both(a: f64, b: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    if is_missing(a) || is_missing(b) {
        MISSING
    } else {
        f(a, b)
    }
}

fn call(op: Op, args: &[Expr], panel: &Panel) -> Matrix {
    let p = |i: usize| Expr::param(args, i);
    let a = || eval(&args[0], panel);
    let b = || eval(&args[1], panel);
    match op {
        Op::Add => a().zip_map(&b(), |x, y| x + y),
        Op::Sub => a().zip_map(&b(), |x, y| x - y),
        Op::Mul => a().zip_map(&b(), |x, y| x * y),
        Op::Div => a().zip_map(&b(), |x, y| x / y),
        Op::Neg => a().map(|x| -x),

        Op::Gt => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x > y))),
        Op::Lt => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x < y))),
        Op::Ge => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x >= y))),
        Op::Le => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x <= y))),
        Op::Eq => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x == y))),
        Op::Ne => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x != y))),
        Op::And => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x != 0.0 && y != 0.0))),
        Op::Or => a().zip_map(&b(), |x, y| both(x, y, |x, y| flag(x != 0.0 || y != 0.0))),
        Op::IfElse => {
            let c = a();
            let x = b();
            let y = eval(&args[2], panel);
            let mut out = Matrix::missing(c.rows(), c.cols());
            for r in 0..c.rows() {
                for k in 0..c.cols() {
                    let v = match truth(c.raw(r, k)) {
                        t if t == 1.0 => x.raw(r, k),
                        t if t == 0.0 => y.raw(r, k),
                        _ => MISSING,
                    };
                    out.set(r, k, v);
                }
            }
            out
        }
        Op::Filter => a().zip_map(&b(), |x, c| match truth(c) {
            t if t == 1.0 => x,
            t if t == 0.0 && !is_missing(x) => 0.0,
            _ => MISSING,
        }),
        Op::Count => rolling(&a(), p(1), |w| w.iter().filter(|v| **v != 0.0).count() as f64),
        Op::SumIf => {
            let vals = a();
            let cond = eval(&args[2], panel);
            rolling2(&vals, &cond, p(1), |w, c| {
                let mut s = 0.0;
                for (x, t) in w.iter().zip(c) {
                    if *t != 0.0 {
                        s += x;
                    }
                }
                s
            })
        }

        Op::Rank => cross_section(&a(), stats::unit_ranks),
        Op::Zscore => {
            let m = a();
            crate::panel::cross_sectional_zscore(&m)
        }
        Op::CsMean => cross_section(&a(), |xs| broadcast(xs, stats::mean(xs))),
        Op::CsStd => cross_section(&a(), |xs| broadcast(xs, stats::std_pop(xs))),
        Op::CsSkew => cross_section(&a(), |xs| broadcast(xs, skewness(xs))),
        Op::CsKurt => cross_section(&a(), |xs| broadcast(xs, kurtosis(xs))),
        Op::CsMax => cross_section(&a(), |xs| broadcast(xs, xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))),
        Op::CsMin => cross_section(&a(), |xs| broadcast(xs, xs.iter().copied().fold(f64::INFINITY, f64::min))),
        Op::CsMedian => cross_section(&a(), |xs| broadcast(xs, stats::median(xs))),
        Op::CsPercentile => {
            let q = Expr::real_param(args, 1);
            cross_section(&a(), |xs| broadcast(xs, stats::quantile(xs, q)))
        }

        Op::Delay => shift(&a(), p(1)),
        Op::Delta => {
            let x = a();
            x.zip_map(&shift(&x, p(1)), |now, then| now - then)
        }
        Op::TsPctChange => {
            let x = a();
            x.zip_map(&shift(&x, p(1)), |now, then| now / then - 1.0)
        }

        Op::TsMean | Op::BbMiddle => rolling(&a(), p(1), stats::mean),
        Op::TsSum | Op::Sumac => rolling(&a(), p(1), |w| w.iter().sum()),
        Op::TsRank => rolling(&a(), p(1), |w| *stats::unit_ranks(w).last().expect("non-empty window")),
        Op::TsZscore => rolling(&a(), p(1), |w| (w[w.len() - 1] - stats::mean(w)) / stats::std_pop(w)),
        Op::TsMedian => rolling(&a(), p(1), stats::median),
        Op::TsMin => rolling(&a(), p(1), |w| w.iter().copied().fold(f64::INFINITY, f64::min)),
        Op::TsMax => rolling(&a(), p(1), |w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        Op::HighDay => rolling(&a(), p(1), |w| days_since_extreme(w, |x, best| x >= best)),
        Op::LowDay => rolling(&a(), p(1), |w| days_since_extreme(w, |x, best| x <= best)),
        Op::TsArgmax => {
            rolling(&a(), p(1), |w| (w.len() - 1) as f64 - days_since_extreme(w, |x, best| x >= best))
        }
        Op::TsArgmin => {
            rolling(&a(), p(1), |w| (w.len() - 1) as f64 - days_since_extreme(w, |x, best| x <= best))
        }
        Op::TsQuantile => {
            let q = Expr::real_param(args, 2);
            rolling(&a(), p(1), |w| stats::quantile(w, q))
        }
        Op::TsPercentile => {
            let q = Expr::real_param(args, 1);
            rolling(&a(), p(2), |w| stats::quantile(w, q))
        }
        Op::TsStd => rolling(&a(), p(1), stats::std_pop),
        Op::TsVar => rolling(&a(), p(1), stats::variance),
        Op::TsMad => rolling(&a(), p(1), |w| {
            let med = stats::median(w);
            let dev: Vec<f64> = w.iter().map(|x| (x - med).abs()).collect();
            stats::median(&dev)
        }),
        Op::BbUpper => rolling(&a(), p(1), |w| stats::mean(w) + 2.0 * stats::std_pop(w)),
        Op::BbLower => rolling(&a(), p(1), |w| stats::mean(w) - 2.0 * stats::std_pop(w)),
        Op::Prod => rolling(&a(), p(1), |w| w.iter().product()),

        Op::TsCorr => rolling2(&a(), &b(), p(2), |x, y| stats::pearson(x, y).unwrap_or(MISSING)),
        Op::TsCovariance => rolling2(&a(), &b(), p(2), stats::covariance),

        Op::Ema => ema(&a(), p(1)),
        Op::Sma => {
            let (n, m) = (p(1) as f64, p(2) as f64);
            recursive(&a(), |prev, x| (m * x + (n - m) * prev) / n)
        }
        Op::Macd => {
            let x = a();
            ema(&x, p(1)).zip_map(&ema(&x, p(2)), |s, l| s - l)
        }
        Op::Wma => {
            let n = p(1);
            // weights[j] applies to window position j (oldest first); newest gets 0.9
            let raw: Vec<f64> = (0..n).map(|j| 0.9f64.powi((n - j) as i32)).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            rolling(&a(), n, |w| w.iter().zip(&weights).map(|(x, k)| x * k).sum())
        }
        Op::DecayLinear => {
            let n = p(1);
            let total = (n * (n + 1)) as f64 / 2.0;
            let weights: Vec<f64> = (1..=n).map(|k| k as f64 / total).collect();
            rolling(&a(), n, |w| w.iter().zip(&weights).map(|(x, k)| x * k).sum())
        }
        Op::Rsi => {
            let n = p(1);
            rolling(&a(), n + 1, |w| {
                let mut gain = 0.0;
                let mut loss = 0.0;
                for pair in w.windows(2) {
                    let d = pair[1] - pair[0];
                    if d > 0.0 {
                        gain += d;
                    } else {
                        loss -= d;
                    }
                }
                let (g, l) = (gain / n as f64, loss / n as f64);
                100.0 * (g / (g + l))
            })
        }

        Op::Log => a().map(|x| if x > 0.0 { x.ln() } else { MISSING }),
        Op::Sqrt => a().map(|x| if x >= 0.0 { x.sqrt() } else { MISSING }),
        Op::Pow => {
            let k = p(1) as i32;
            a().map(|x| x.powi(k))
        }
        Op::Sign => a().map(|x| {
            if is_missing(x) {
                MISSING
            } else if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Exp => a().map(f64::exp),
        Op::Abs => a().map(f64::abs),
        Op::Max2 => a().zip_map(&b(), |x, y| both(x, y, f64::max)),
        Op::Min2 => a().zip_map(&b(), |x, y| both(x, y, f64::min)),
        Op::Inv => a().map(|x| 1.0 / x),
        Op::Floor => a().map(f64::floor),

        Op::RegBeta | Op::RegResi => {
            let n = p(2);
            let y = a();
            let want_resid = op == Op::RegResi;
            let fit = move |ys: &[f64], xs: &[f64]| match ols(ys, xs) {
                Some((alpha, beta)) if want_resid => ys[ys.len() - 1] - (alpha + beta * xs[xs.len() - 1]),
                Some((_, beta)) => beta,
                None => MISSING,
            };
            match &args[1] {
                Expr::Call { op: Op::Sequence, .. } => {
                    let seq: Vec<f64> = (1..=n).map(|k| k as f64).collect();
                    rolling(&y, n, |w| fit(w, &seq))
                }
                other => rolling2(&y, &eval(other, panel), n, fit),
            }
        }
        Op::Sequence => unreachable!("SEQUENCE is only evaluated inside REGBETA/REGRESI"),
    }
}

/// Ordinary least squares of `ys` on `xs` with intercept: (alpha, beta).
/// `None` when the regressor has no variance.
pub fn ols(ys: &[f64], xs: &[f64]) -> Option<(f64, f64)> {
    let vx = stats::variance(xs);
    if !(vx > 0.0) {
        return None;
    }
    let beta = stats::covariance(xs, ys) / vx;
    let alpha = stats::mean(ys) - beta * stats::mean(xs);
    Some((alpha, beta))
}

/// Lag of the most recent window extreme: 0 = latest date.
fn days_since_extreme(w: &[f64], better_or_equal: impl Fn(f64, f64) -> bool) -> f64 {
    let mut best = 0;
    for (i, &x) in w.iter().enumerate() {
        if better_or_equal(x, w[best]) {
            best = i;
        }
    }
    (w.len() - 1 - best) as f64
}

fn skewness(xs: &[f64]) -> f64 {
    let m = stats::mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return MISSING;
    }
    m3 / m2.powf(1.5)
}

fn kurtosis(xs: &[f64]) -> f64 {
    let m = stats::mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return MISSING;
    }
    m4 / (m2 * m2) - 3.0
}

fn broadcast(xs: &[f64], v: f64) -> Vec<f64> {
    vec![v; xs.len()]
}

/// Applies `f` to each date's non-missing entries and scatters the result
/// back; missing cells stay missing.
fn cross_section(m: &Matrix, f: impl Fn(&[f64]) -> Vec<f64>) -> Matrix {
    let mut out = Matrix::missing(m.rows(), m.cols());
    let mut present = Vec::with_capacity(m.cols());
    let mut idx = Vec::with_capacity(m.cols());
    for r in 0..m.rows() {
        present.clear();
        idx.clear();
        for (c, &v) in m.row(r).iter().enumerate() {
            if !is_missing(v) {
                present.push(v);
                idx.push(c);
            }
        }
        if present.is_empty() {
            continue;
        }
        let vals = f(&present);
        for (&c, v) in idx.iter().zip(vals) {
            out.set(r, c, v);
        }
    }
    out
}

fn shift(m: &Matrix, lag: usize) -> Matrix {
    let mut out = Matrix::missing(m.rows(), m.cols());
    for r in lag..m.rows() {
        out.row_mut(r).copy_from_slice(m.row(r - lag));
    }
    out
}

/// Per-instrument rolling window of length `n`; any missing cell in the
/// window (or fewer than `n` dates so far) makes the output missing.
fn rolling(m: &Matrix, n: usize, f: impl Fn(&[f64]) -> f64) -> Matrix {
    let mut out = Matrix::missing(m.rows(), m.cols());
    for c in 0..m.cols() {
        let col = m.column(c);
        let mut run = 0usize; // consecutive present values ending at t
        for t in 0..col.len() {
            run = if is_missing(col[t]) { 0 } else { run + 1 };
            if run >= n {
                out.set(t, c, f(&col[t + 1 - n..=t]));
            }
        }
    }
    out
}

fn rolling2(a: &Matrix, b: &Matrix, n: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> Matrix {
    let mut out = Matrix::missing(a.rows(), a.cols());
    for c in 0..a.cols() {
        let x = a.column(c);
        let y = b.column(c);
        let mut run = 0usize;
        for t in 0..x.len() {
            run = if is_missing(x[t]) || is_missing(y[t]) { 0 } else { run + 1 };
            if run >= n {
                out.set(t, c, f(&x[t + 1 - n..=t], &y[t + 1 - n..=t]));
            }
        }
    }
    out
}

/// State recursion seeded at the first present value. A missing input yields
/// a missing output and leaves the state untouched.
fn recursive(m: &Matrix, step: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = Matrix::missing(m.rows(), m.cols());
    for c in 0..m.cols() {
        let mut state: Option<f64> = None;
        for t in 0..m.rows() {
            let x = m.raw(t, c);
            if is_missing(x) {
                continue;
            }
            let next = match state {
                None => x,
                Some(prev) => step(prev, x),
            };
            let next = clean(next);
            if is_missing(next) {
                state = None;
                continue;
            }
            state = Some(next);
            out.set(t, c, next);
        }
    }
    out
}

fn ema(m: &Matrix, n: usize) -> Matrix {
    let alpha = 2.0 / (n as f64 + 1.0);
    recursive(m, move |prev, x| alpha * x + (1.0 - alpha) * prev)
}
