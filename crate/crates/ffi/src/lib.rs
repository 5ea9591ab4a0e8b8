//! C ABI over the factorlogic engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`LfStatus`]; on failure
//! [`lf_last_error_message`] describes the error for the calling thread.
//! Strings returned through out-parameters are freed with [`lf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use factorlogic::dsl::{evaluate, parse, FactorExpr};
use factorlogic::logic::{canonicalize_fields, check, compile, CanonicalRecord, ConstraintSet};
use factorlogic::panel::{ingest_csv, ColumnSchema, Panel, PanelError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    Logic = 5,
    BufferSize = 6,
    Panic = 7,
}

/// An aligned OHLCV panel.
pub struct LfPanel(Panel);

/// A parsed factor expression.
pub struct LfExpr(FactorExpr);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(LfStatus, String);

fn fail(status: LfStatus, msg: impl ToString) -> Fail {
    Fail(status, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(LfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(LfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(fail(LfStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn out_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

fn read_gamma(text: &str) -> Result<ConstraintSet, Fail> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| fail(LfStatus::Parse, e))?;
    if value.get("schema_version").is_some() {
        ConstraintSet::from_record(text).map_err(|e| fail(LfStatus::Parse, e))
    } else {
        serde_json::from_value(value).map_err(|e| fail(LfStatus::Parse, e))
    }
}

/// The last error on this thread, or null. Valid until the next call into
/// this library from the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn lf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a long-format CSV with columns date, symbol, open, high, low,
/// close, volume.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_panel_load_csv(path: *const c_char, out: *mut *mut LfPanel) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let panel = ingest_csv(path, &ColumnSchema::default()).map_err(|e| match e {
            PanelError::Io(_) => fail(LfStatus::Io, e),
            _ => fail(LfStatus::Parse, e),
        })?;
        *out = Box::into_raw(Box::new(LfPanel(panel)));
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle from [`lf_panel_load_csv`], freed once.
#[no_mangle]
pub unsafe extern "C" fn lf_panel_free(panel: *mut LfPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_panel_shape(panel: *const LfPanel, n_dates: *mut usize, n_instruments: *mut usize) -> LfStatus {
    guard(|| {
        non_null(panel, "panel")?;
        non_null(n_dates, "n_dates")?;
        non_null(n_instruments, "n_instruments")?;
        let (d, i) = (*panel).0.shape();
        *n_dates = d;
        *n_instruments = i;
        Ok(())
    })
}

/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_parse(text: *const c_char, out: *mut *mut LfExpr) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let expr = parse(str_arg(text, "text")?).map_err(|e| fail(LfStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(LfExpr(expr)));
        Ok(())
    })
}

/// # Safety
/// `expr` must be null or a handle from [`lf_expr_parse`], freed once.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_free(expr: *mut LfExpr) {
    if !expr.is_null() {
        drop(Box::from_raw(expr));
    }
}

/// Canonical text of the expression.
///
/// # Safety
/// `expr` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_unparse(expr: *const LfExpr, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        non_null(expr, "expr")?;
        non_null(out, "out")?;
        *out = out_string((*expr).0.to_string());
        Ok(())
    })
}

/// Writes the factor values row-major (date, then instrument) into `values`,
/// which must hold exactly dates x instruments cells. Missing cells are NaN.
///
/// # Safety
/// `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_eval(panel: *const LfPanel, expr: *const LfExpr, values: *mut f64, len: usize) -> LfStatus {
    guard(|| {
        non_null(panel, "panel")?;
        non_null(expr, "expr")?;
        non_null(values, "values")?;
        let p = &(*panel).0;
        let (d, i) = p.shape();
        if len != d * i {
            return Err(fail(LfStatus::BufferSize, format!("buffer holds {len} cells, panel has {}", d * i)));
        }
        let m = evaluate(&(*expr).0, p);
        let out = std::slice::from_raw_parts_mut(values, len);
        for r in 0..d {
            for c in 0..i {
                out[r * i + c] = m.get(r, c).unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// Compiles a structured logic (JSON with `C` and `B`) into its constraint
/// set, returned as a canonical record.
///
/// # Safety
/// `logic_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_logic_compile(logic_json: *const c_char, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let value: serde_json::Value =
            serde_json::from_str(str_arg(logic_json, "logic_json")?).map_err(|e| fail(LfStatus::Parse, e))?;
        let h = canonicalize_fields(&value).map_err(|e| fail(LfStatus::Parse, e))?;
        let gamma = compile(&h).map_err(|e| fail(LfStatus::Logic, e))?;
        *out = out_string(gamma.to_record());
        Ok(())
    })
}

/// Checks an expression against a constraint set. `ok` is set to 1 when it
/// passes, else 0. When `report` is non-null it receives the violations as
/// JSON.
///
/// # Safety
/// `expr` must be a live handle, `gamma_json` a NUL-terminated string, `ok`
/// valid, and `report` null or valid.
#[no_mangle]
pub unsafe extern "C" fn lf_check(
    expr: *const LfExpr,
    gamma_json: *const c_char,
    ok: *mut c_int,
    report: *mut *mut c_char,
) -> LfStatus {
    guard(|| {
        non_null(expr, "expr")?;
        non_null(ok, "ok")?;
        let gamma = read_gamma(str_arg(gamma_json, "gamma_json")?)?;
        let r = check(&(*expr).0, &gamma);
        *ok = c_int::from(r.ok);
        if !report.is_null() {
            let items: Vec<_> = r
                .violations
                .iter()
                .map(|v| serde_json::json!({"path": v.path, "message": v.message}))
                .collect();
            *report = out_string(serde_json::json!({"ok": r.ok, "violations": items}).to_string());
        }
        Ok(())
    })
}
