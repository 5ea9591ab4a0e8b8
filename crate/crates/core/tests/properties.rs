mod common;

use factorlogic::backtest::{simulate_topk, StrategyConfig};
use factorlogic::dsl::{evaluate, ols, parse, required_lookback, Family};
use factorlogic::logic::{canonicalize_fields, CanonicalRecord, check, compile, Formula, LogicVar, MarketLogicStruct, Predicate};
use factorlogic::matrix::Matrix;
use factorlogic::model::{FeatureBlock, ScoreModel};
use factorlogic::panel::{cross_sectional_zscore, filter_universe, forward_returns, read_csv, ColumnSchema, Field, Panel};
use proptest::prelude::*;
use rand::Rng;

use common::{agree, random_panel, render, rng, valid_program};

fn panel(seed: u64) -> Panel {
    random_panel(&mut rng(seed), 40, 12).0
}

fn eval(text: &str, p: &Panel) -> Matrix {
    evaluate(&parse(text).unwrap_or_else(|e| panic!("{text}: {e}")), p)
}

fn close_to(a: &Matrix, b: &Matrix, tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.shape(), b.shape());
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            match (a.get(r, c), b.get(r, c)) {
                (None, None) => {}
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0), "({r},{c}) {x} vs {y}"),
                (x, y) => prop_assert!(false, "({r},{c}) missingness {x:?} vs {y:?}"),
            }
        }
    }
    Ok(())
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

// ---------------------------------------------------------------- panel

proptest! {
    #![proptest_config(config())]

    #[test]
    fn export_then_ingest_is_identity(seed in any::<u64>()) {
        let p = panel(seed);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnSchema::default()).unwrap();
        prop_assert_eq!(back.dates(), p.dates());
        prop_assert_eq!(back.instruments(), p.instruments());
        for f in Field::ALL {
            prop_assert!(back.field(f).bit_identical(p.field(f)), "{f}");
        }
    }

    #[test]
    fn universe_filter_is_idempotent(seed in any::<u64>(), min_days in 1usize..40) {
        let p = panel(seed);
        if let Ok(once) = filter_universe(&p, min_days) {
            prop_assert_eq!(filter_universe(&once, min_days).unwrap(), once);
        }
    }

    #[test]
    fn zscore_rows_are_standardized(seed in any::<u64>()) {
        let z = cross_sectional_zscore(panel(seed).close());
        for r in 0..z.rows() {
            let xs: Vec<f64> = z.row(r).iter().copied().filter(|v| v.is_finite()).collect();
            if xs.iter().any(|v| *v != xs[0]) {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((common::pop_std(&xs) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_returns_cite_two_closes(seed in any::<u64>(), h in 1usize..5, k in 0.01f64..100.0) {
        let p = panel(seed);
        let f = forward_returns(&p, h);
        for t in 0..p.n_dates() {
            for c in 0..p.n_instruments() {
                let later = if t + h < p.n_dates() { p.close().get(t + h, c) } else { None };
                let want = match (p.close().get(t, c), later) {
                    (Some(a), Some(b)) => Some(b / a - 1.0),
                    _ => None,
                };
                prop_assert_eq!(f.values.get(t, c), want);
            }
        }
        let scaled = p.map_rows(0..p.n_dates(), |field, v| if field == Field::Close { v * k } else { v }).unwrap();
        close_to(&forward_returns(&scaled, h).values, &f.values, 1e-12)?;
    }
}

// ---------------------------------------------------------------- factor language

proptest! {
    #![proptest_config(config())]

    #[test]
    fn unparse_round_trips(seed in any::<u64>()) {
        let text = render(&valid_program(&mut rng(seed), None, 4));
        let once = parse(&text).unwrap();
        let again = parse(&once.to_string()).unwrap();
        prop_assert_eq!(&again, &once);
        prop_assert_eq!(again.to_string(), once.to_string());
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (p, _) = random_panel(&mut r, 40, 12);
        let e = parse(&render(&valid_program(&mut r, None, 4))).unwrap();
        prop_assert!(evaluate(&e, &p).bit_identical(&evaluate(&e, &p)));
    }

    #[test]
    fn cross_section_ops_ignore_increasing_affine_maps(seed in any::<u64>(), a in 0.01f64..50.0, b in -100.0f64..100.0) {
        let p = panel(seed);
        let moved = p.map_rows(0..p.n_dates(), |f, v| if f == Field::Close { a * v + b } else { v }).unwrap();
        let rank = eval("RANK(close)", &p);
        prop_assert!(rank.bit_identical(&eval("RANK(close)", &moved)));
        prop_assert!(rank.as_slice().iter().filter(|v| v.is_finite()).all(|v| (0.0..=1.0).contains(v)));
        close_to(&eval("ZSCORE(close)", &p), &eval("ZSCORE(close)", &moved), 1e-9)?;
    }

    #[test]
    fn dropping_leading_dates_commutes_with_evaluation(seed in any::<u64>(), d in 1usize..10) {
        let mut r = rng(seed);
        let (p, _) = random_panel(&mut r, 40, 12);
        let e = parse(&render(&valid_program(&mut r, None, 3))).unwrap();
        prop_assume!(e.is_finite_memory());
        let Ok(tail) = p.slice_dates(d..p.n_dates()) else { return Ok(()) };
        prop_assume!(tail.n_instruments() == p.n_instruments());
        let full = evaluate(&e, &p).slice_rows(d..p.n_dates());
        let cut = evaluate(&e, &tail);
        let skip = required_lookback(&e).min(cut.rows());
        agree(&cut.slice_rows(skip..cut.rows()), &grid(&full.slice_rows(skip..full.rows())), 1e-9)
            .map_err(TestCaseError::fail)?;
    }

    #[test]
    fn lag_and_window_identities(seed in any::<u64>(), m in 1usize..6, n in 1usize..6) {
        let p = panel(seed);
        let e = |t: String| eval(&t, &p);
        close_to(&e(format!("DELAY(DELAY(close, {}), {})", m, n)), &e(format!("DELAY(close, {})", m + n)), 1e-9)?;
        close_to(&e(format!("DELTA(close, {})", n)), &e(format!("close - DELAY(close, {})", n)), 1e-9)?;
        close_to(&e(format!("TS_SUM(close, {})", n)), &e(format!("{} * TS_MEAN(close, {})", n, n)), 1e-9)?;
        close_to(&e(format!("SUMAC(close, {})", n)), &e(format!("TS_SUM(close, {})", n)), 1e-9)?;
    }

    #[test]
    fn bounded_outputs(seed in any::<u64>(), n in 2usize..12) {
        let p = panel(seed);
        let within = |m: &Matrix, lo: f64, hi: f64| m.as_slice().iter().filter(|v| v.is_finite()).all(|v| (lo..=hi).contains(v));
        let hd = eval(&format!("HIGHDAY(close, {})", n), &p);
        let am = eval(&format!("TS_ARGMAX(close, {})", n), &p);
        let rsi = eval(&format!("RSI(close, {})", n), &p);
        prop_assert!(within(&hd, 0.0, (n - 1) as f64));
        prop_assert!(within(&am, 0.0, (n - 1) as f64));
        prop_assert!(within(&rsi, 0.0, 100.0));
        let up = eval(&format!("BB_UPPER(close, {})", n), &p);
        let mid = eval(&format!("BB_MIDDLE(close, {})", n), &p);
        let lo = eval(&format!("BB_LOWER(close, {})", n), &p);
        for k in 0..up.as_slice().len() {
            let (u, m, l) = (up.as_slice()[k], mid.as_slice()[k], lo.as_slice()[k]);
            if u.is_finite() && m.is_finite() && l.is_finite() {
                prop_assert!(u >= m && m >= l);
            }
        }
    }

    #[test]
    fn regression_residuals_are_orthogonal(seed in any::<u64>(), n in 3usize..10) {
        let p = panel(seed);
        let res = eval(&format!("REGRESI(close, volume, {})", n), &p);
        for c in 0..p.n_instruments() {
            for t in n - 1..p.n_dates() {
                let Some(latest) = res.get(t, c) else { continue };
                let ys: Vec<f64> = (t + 1 - n..=t).map(|s| p.close().raw(s, c)).collect();
                let xs: Vec<f64> = (t + 1 - n..=t).map(|s| p.field(Field::Volume).raw(s, c)).collect();
                let (a, b) = ols(&ys, &xs).unwrap();
                let mx = xs.iter().sum::<f64>() / n as f64;
                let resid: Vec<f64> = ys.iter().zip(&xs).map(|(y, x)| y - a - b * x).collect();
                let dot: f64 = resid.iter().zip(&xs).map(|(e, x)| e * (x - mx)).sum();
                prop_assert!(dot.abs() < 1e-6 * xs.iter().map(|x| (x - mx).abs()).sum::<f64>().max(1.0), "{dot}");
                prop_assert!((latest - resid[n - 1]).abs() <= 1e-9 * latest.abs().max(1.0));
            }
        }
    }
}

fn grid(m: &Matrix) -> common::Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

// ---------------------------------------------------------------- logic

const PRED_OPS: &[&str] = &[
    "trend_up", "trend_not_up", "falling", "diverges", "correlated", "rank_high", "below_average", "gt", "cross_above",
    "slope_up", "overbought", "high_volatility",
];

fn predicate() -> impl Strategy<Value = (usize, usize, u32)> {
    (0..LogicVar::ALL.len(), 0..PRED_OPS.len(), 1u32..8)
}

fn logic(preds: &[(usize, usize, u32)], d: i64) -> MarketLogicStruct {
    let preds: Vec<Predicate> = preds
        .iter()
        .enumerate()
        .map(|(i, (v, op, w))| Predicate {
            id: format!("p{}", i + 1),
            v: LogicVar::ALL[*v],
            op: PRED_OPS[*op].into(),
            theta: String::new(),
            w: *w,
        })
        .collect();
    let formula = Formula::parse(&preds.iter().map(|p| p.id.clone()).collect::<Vec<_>>().join(" AND ")).unwrap();
    let b = serde_json::from_value(serde_json::json!({"y": "forward_return", "d": d, "h": 1})).unwrap();
    MarketLogicStruct::new(formula, preds, b).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn compile_is_pure(preds in prop::collection::vec(predicate(), 1..5), neg in any::<bool>()) {
        let h = logic(&preds, if neg { -1 } else { 1 });
        let a = compile(&h).unwrap();
        let b = compile(&h.clone()).unwrap();
        prop_assert_eq!(a.to_record(), b.to_record());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn extra_predicates_never_narrow(preds in prop::collection::vec(predicate(), 1..5), extra in predicate()) {
        let h = logic(&preds, -1);
        let mut more = preds.clone();
        more.push(extra);
        let (small, big) = (compile(&h).unwrap(), compile(&logic(&more, -1)).unwrap());
        prop_assert!(small.allowed_variables.is_subset(&big.allowed_variables));
        prop_assert!(small.operator_families.is_subset(&big.operator_families));
    }

    #[test]
    fn passing_check_means_conformant(preds in prop::collection::vec(predicate(), 1..4), seed in any::<u64>()) {
        let gamma = compile(&logic(&preds, 1)).unwrap();
        let text = render(&valid_program(&mut rng(seed), None, 3));
        let e = parse(&text).unwrap();
        if check(&e, &gamma).ok {
            prop_assert!(e.variables().is_subset(&gamma.allowed_variables), "{text}");
            for op in e.ops() {
                let f = op.family();
                prop_assert!(gamma.operator_families.contains(&f) || matches!(f, Family::Arithmetic | Family::Mathematical), "{text}");
            }
            prop_assert!(parse(&e.to_string()).is_ok());
        }
    }

    #[test]
    fn canonicalize_is_idempotent(preds in prop::collection::vec(predicate(), 1..5), neg in any::<bool>()) {
        let h = logic(&preds, if neg { -1 } else { 1 });
        let once = canonicalize_fields(&serde_json::to_value(&h).unwrap()).unwrap();
        let twice = canonicalize_fields(&serde_json::to_value(&once).unwrap()).unwrap();
        prop_assert_eq!(twice, once);
    }
}

// ---------------------------------------------------------------- score model

fn features(seed: u64, p: usize, dates: usize, names: usize) -> (FeatureBlock, Matrix) {
    let mut r = rng(seed);
    let mut mats = Vec::new();
    for _ in 0..p {
        let data = (0..dates * names).map(|_| if r.random_bool(0.05) { f64::NAN } else { r.random_range(-2.0..2.0) }).collect();
        mats.push(Matrix::from_rows(dates, names, data));
    }
    let labels = Matrix::from_rows(dates, names, (0..dates * names).map(|_| r.random_range(-0.05..0.05)).collect());
    let names_v = (0..p).map(|i| format!("f{i}")).collect();
    (FeatureBlock::new(names_v, mats).unwrap(), labels)
}

/// Gauss-Jordan with partial pivoting on the ridge normal equations.
fn normal_equations(f: &FeatureBlock, y: &Matrix, rows: std::ops::Range<usize>, lambda: f64) -> Vec<f64> {
    let p = f.len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for t in rows {
        for c in 0..y.cols() {
            let x: Vec<f64> = f.matrices().iter().map(|m| m.raw(t, c)).collect();
            if y.raw(t, c).is_nan() || x.iter().any(|v| v.is_nan()) {
                continue;
            }
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += x[i] * x[j];
                }
                a[i][p] += x[i] * y.raw(t, c);
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let k = a[r][col] / a[col][col];
                for j in col..=p {
                    a[r][j] -= k * a[col][j];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ridge_matches_normal_equations(seed in any::<u64>(), p in 1usize..=10, lambda in 0.0f64..5.0) {
        let (f, y) = features(seed, p, 30, 15);
        let model = ScoreModel::fit(&f, &y, 0..30, lambda).unwrap();
        for (w, o) in model.weights.iter().zip(normal_equations(&f, &y, 0..30, lambda)) {
            prop_assert!((w - o).abs() <= 1e-6 * o.abs().max(1.0), "{w} vs {o}");
        }
    }

    #[test]
    fn fit_and_predict_ignore_rows_outside(seed in any::<u64>(), cut in 10usize..25) {
        let (f, y) = features(seed, 3, 30, 15);
        let poison = |m: &Matrix| {
            let mut m = m.clone();
            for t in cut..m.rows() {
                for c in 0..m.cols() {
                    m.set(t, c, 9.9e9);
                }
            }
            m
        };
        let pf = FeatureBlock::new(f.names().to_vec(), f.matrices().iter().map(poison).collect()).unwrap();
        let a = ScoreModel::fit(&f, &y, 0..cut, 0.5).unwrap();
        let b = ScoreModel::fit(&pf, &poison(&y), 0..cut, 0.5).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.predict(&f, 0..cut).unwrap().bit_identical(&b.predict(&pf, 0..cut).unwrap()));
    }

    #[test]
    fn predict_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (f, y) = features(seed, 4, 20, 10);
        let (g, _) = features(seed ^ 0x5555, 4, 20, 10);
        let model = ScoreModel::fit(&f, &y, 0..20, 1.0).unwrap();
        let mix = FeatureBlock::new(
            f.names().to_vec(),
            f.matrices().iter().zip(g.matrices()).map(|(x, z)| x.zip_map(z, |u, v| a * u + b * v)).collect(),
        ).unwrap();
        let left = model.predict(&mix, 0..20).unwrap();
        let pf = model.predict(&f, 0..20).unwrap();
        let pg = model.predict(&g, 0..20).unwrap();
        close_to(&left, &pf.zip_map(&pg, |u, v| a * u + b * v), 1e-9)?;
    }
}

// ---------------------------------------------------------------- strategy

fn market(seed: u64, dates: usize, names: usize) -> (Matrix, Matrix) {
    let mut r = rng(seed);
    let s = Matrix::from_rows(dates, names, (0..dates * names).map(|_| r.random_range(-1.0..1.0)).collect());
    let y = Matrix::from_rows(dates, names, (0..dates * names).map(|_| r.random_range(-0.05..0.05)).collect());
    (s, y)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn frictionless_no_drop_holds_a_fixed_set(seed in any::<u64>(), k in 1usize..10) {
        let (s, y) = market(seed, 25, 12);
        let cfg = StrategyConfig { top_k: k, n_drop: 0, buy_cost: 0.0, sell_cost: 0.0, ..StrategyConfig::default() };
        let sim = simulate_topk(&s, &y, 0..25, &cfg);
        let set = sim.holdings[0].clone();
        prop_assert!(sim.holdings.iter().all(|h| *h == set));
        let mut eq = 1.0;
        for t in 0..25 {
            eq *= 1.0 + set.iter().map(|&i| y.raw(t, i)).sum::<f64>() / set.len() as f64;
            prop_assert!((sim.equity[t + 1] - eq).abs() < 1e-12);
        }
    }

    #[test]
    fn churn_is_bounded(seed in any::<u64>(), k in 1usize..10, drop in 0usize..10) {
        let drop = drop.min(k);
        let (s, y) = market(seed, 25, 12);
        let cfg = StrategyConfig { top_k: k, n_drop: drop, ..StrategyConfig::default() };
        let sim = simulate_topk(&s, &y, 0..25, &cfg);
        for t in &sim.turnover[1..] {
            prop_assert!(*t <= 2.0 * drop as f64 / k as f64 + 1e-12, "{t}");
        }
    }
}
