use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use factorlogic_ffi::*;

fn last_error() -> String {
    let p = lf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    lf_string_free(s);
    out
}

fn write_panel(dir: &std::path::Path) -> CString {
    let path = dir.join("p.csv");
    let mut text = String::from("date,symbol,open,high,low,close,volume\n");
    for (d, day) in ["2024-01-02", "2024-01-03", "2024-01-04"].iter().enumerate() {
        for (i, sym) in ["AAA", "BBB", "CCC"].iter().enumerate() {
            let c = 10.0 + (d * 3 + i) as f64;
            text.push_str(&format!("{day},{sym},{c},{c},{c},{c},{}\n", 1000 + i * 10));
        }
    }
    std::fs::write(&path, text).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

const LOGIC: &str = r#"{"C": {"formula": "p1 AND p2", "predicates": [
    {"id": "p1", "v": "price", "op": "trend_up", "theta": "", "w": 1},
    {"id": "p2", "v": "volume", "op": "trend_not_up", "theta": "", "w": 1}]},
  "B": {"y": "forward_return", "d": -1, "h": 1}}"#;

#[test]
fn panel_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_panel(dir.path());
    unsafe {
        let mut panel = ptr::null_mut();
        assert_eq!(lf_panel_load_csv(path.as_ptr(), &mut panel), LfStatus::Ok);
        let (mut d, mut i) = (0usize, 0usize);
        assert_eq!(lf_panel_shape(panel, &mut d, &mut i), LfStatus::Ok);
        assert_eq!((d, i), (3, 3));

        let text = CString::new("DELTA(close, 1)").unwrap();
        let mut expr = ptr::null_mut();
        assert_eq!(lf_expr_parse(text.as_ptr(), &mut expr), LfStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(lf_expr_unparse(expr, &mut s), LfStatus::Ok);
        assert_eq!(take(s), "DELTA(close, 1)");

        let mut buf = vec![0.0; 9];
        assert_eq!(lf_eval(panel, expr, buf.as_mut_ptr(), buf.len()), LfStatus::Ok);
        assert!(buf[..3].iter().all(|v| v.is_nan()));
        assert!(buf[3..].iter().all(|v| *v == 3.0));

        assert_eq!(lf_eval(panel, expr, buf.as_mut_ptr(), 8), LfStatus::BufferSize);
        assert!(last_error().contains("8"));

        lf_expr_free(expr);
        lf_panel_free(panel);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut expr = ptr::null_mut();
        let bad = CString::new("RANK(close").unwrap();
        assert_eq!(lf_expr_parse(bad.as_ptr(), &mut expr), LfStatus::Parse);
        assert!(expr.is_null());
        assert!(last_error().contains("position"));
        assert_eq!(lf_expr_parse(ptr::null(), &mut expr), LfStatus::NullArgument);

        let missing = CString::new("/nonexistent/panel.csv").unwrap();
        let mut panel = ptr::null_mut();
        assert_eq!(lf_panel_load_csv(missing.as_ptr(), &mut panel), LfStatus::Io);

        let ok = CString::new("close").unwrap();
        assert_eq!(lf_expr_parse(ok.as_ptr(), &mut expr), LfStatus::Ok);
        assert!(lf_last_error_message().is_null());
        lf_expr_free(expr);
        lf_expr_free(ptr::null_mut());
        lf_panel_free(ptr::null_mut());
        lf_string_free(ptr::null_mut());
    }
}

#[test]
fn compile_then_check() {
    unsafe {
        let logic = CString::new(LOGIC).unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(lf_logic_compile(logic.as_ptr(), &mut g), LfStatus::Ok);
        let gamma = take(g);
        assert!(gamma.starts_with("{\"schema_version\":1"));
        let mut again = ptr::null_mut();
        lf_logic_compile(logic.as_ptr(), &mut again);
        assert_eq!(take(again), gamma);

        let gamma_c = CString::new(gamma).unwrap();
        let check_one = |text: &str| {
            let t = CString::new(text).unwrap();
            let mut expr = ptr::null_mut();
            assert_eq!(lf_expr_parse(t.as_ptr(), &mut expr), LfStatus::Ok);
            let mut ok: c_int = -1;
            let mut report = ptr::null_mut();
            assert_eq!(lf_check(expr, gamma_c.as_ptr(), &mut ok, &mut report), LfStatus::Ok);
            lf_expr_free(expr);
            (ok, take(report))
        };
        let (ok, _) = check_one("RANK(TS_PCTCHANGE(close, 1)) - RANK(TS_PCTCHANGE(volume, 1))");
        assert_eq!(ok, 1);
        let (ok, report) = check_one("EMA(close, 5)");
        assert_eq!(ok, 0, "{report}");
        assert!(report.contains("violations"));

        let broken = CString::new(r#"{"C": {}}"#).unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(lf_logic_compile(broken.as_ptr(), &mut g), LfStatus::Parse);
        assert!(g.is_null());
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/factorlogic.h")).unwrap();
    for name in [
        "lf_panel_load_csv",
        "lf_panel_free",
        "lf_panel_shape",
        "lf_expr_parse",
        "lf_expr_free",
        "lf_expr_unparse",
        "lf_eval",
        "lf_logic_compile",
        "lf_check",
        "lf_last_error_message",
        "lf_string_free",
        "LF_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
