//! C ABI over the policytrace core.
//!
//! Every fallible function returns a [`PtStatus`]; on failure the message is
//! available from [`pt_last_error`] on the same thread. Strings handed out by
//! the library are owned by the caller and released with [`pt_string_free`].
//! Plans and rule bases are opaque handles with their own free functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use policytrace::cost::{self, CostProfile};
use policytrace::engine::{self, Fact};
use policytrace::plan::{self, PlanDocument};
use policytrace::retrieval;
use policytrace::rulelang::{self, RuleBase};

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Panic = 5,
}

/// A parsed plan document.
pub struct PtPlan(PlanDocument);

/// A parsed, checked rule base.
pub struct PtRuleBase(RuleBase);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let c = CString::new(message.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(PtStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PtStatus::Ok
        }
        Ok(Err(Fail(code, message))) => {
            set_error(message);
            code
        }
        Err(_) => {
            set_error("internal panic");
            PtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PtStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PtStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(PtStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(PtStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(PtStatus::NullArgument, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn invalid(e: impl std::fmt::Display) -> Fail {
    Fail(PtStatus::InvalidArgument, e.to_string())
}

/// The last error on this thread, or null. Valid until the next call into
/// the library from this thread; do not free.
#[no_mangle]
pub extern "C" fn pt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a plan in the text format or its JSON mirror.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_parse(source: *const c_char, out: *mut *mut PtPlan) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let src = str_arg(source, "source")?;
        let doc = plan::parse_plan(src).map_err(|e| Fail(PtStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(PtPlan(doc)));
        Ok(())
    })
}

/// # Safety
/// `plan` must come from [`pt_plan_parse`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_free(plan: *mut PtPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// The plan as JSON; free with [`pt_string_free`].
///
/// # Safety
/// `plan` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_plan_to_json(plan: *const PtPlan, out: *mut *mut c_char) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let plan = ref_arg(plan, "plan")?;
        *out = owned(plan::plan_to_json(&plan.0));
        Ok(())
    })
}

/// Parses and checks a rule base. Diagnostics are reported one per line as
/// `line:col: code: message`.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_rulebase_parse(source: *const c_char, out: *mut *mut PtRuleBase) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let src = str_arg(source, "source")?;
        let base = rulelang::parse_rules(src).map_err(|ds| {
            let lines: Vec<String> = ds.iter().map(|d| d.to_string()).collect();
            Fail(PtStatus::Parse, lines.join("\n"))
        })?;
        *out = Box::into_raw(Box::new(PtRuleBase(base)));
        Ok(())
    })
}

/// # Safety
/// `base` must come from [`pt_rulebase_parse`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pt_rulebase_free(base: *mut PtRuleBase) {
    if !base.is_null() {
        drop(Box::from_raw(base));
    }
}

/// Number of rules, or 0 for a null handle.
///
/// # Safety
/// `base` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_rulebase_len(base: *const PtRuleBase) -> usize {
    base.as_ref().map_or(0, |b| b.0.rules.len())
}

/// Canonical text of the rule base; free with [`pt_string_free`].
///
/// # Safety
/// `base` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_rulebase_serialize(base: *const PtRuleBase, out: *mut *mut c_char) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let base = ref_arg(base, "base")?;
        *out = owned(rulelang::serialize_rules(&base.0));
        Ok(())
    })
}

/// Runs the engine on a fact given as JSON,
/// `{"cpt": "...", "attributes": {"name": true, ...}}`, and returns the trace
/// as JSON.
///
/// # Safety
/// `base` must be a live handle, `fact_json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pt_engine_run(
    base: *const PtRuleBase,
    fact_json: *const c_char,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let base = ref_arg(base, "base")?;
        let fact = parse_fact(str_arg(fact_json, "fact_json")?)?;
        let trace = engine::run(&base.0, &fact);
        *out = owned(serde_json::to_string(&trace).map_err(invalid)?);
        Ok(())
    })
}

/// Like [`pt_engine_run`] but returns the reviewer-facing explanation, with
/// the cited subsections quoted from `plan`.
///
/// # Safety
/// Handles must be live, `fact_json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pt_engine_explain(
    base: *const PtRuleBase,
    plan: *const PtPlan,
    fact_json: *const c_char,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let base = ref_arg(base, "base")?;
        let plan = ref_arg(plan, "plan")?;
        let fact = parse_fact(str_arg(fact_json, "fact_json")?)?;
        let trace = engine::run(&base.0, &fact);
        *out = owned(engine::explain(&trace, &plan.0).map_err(invalid)?);
        Ok(())
    })
}

fn parse_fact(json: &str) -> Result<Fact, Fail> {
    let fact: Fact = serde_json::from_str(json).map_err(|e| Fail(PtStatus::Parse, e.to_string()))?;
    Fact::new(fact.cpt, fact.attributes).map_err(invalid)
}

/// Softmax of `logits[0..n]` into `out[0..n]`.
///
/// # Safety
/// Both arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_softmax(logits: *const f64, n: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let logits = slice_arg(logits, n, "logits")?;
        let probs = retrieval::softmax_normalize(logits).map_err(invalid)?;
        if out.is_null() {
            return Err(Fail(PtStatus::NullArgument, "`out` is null".into()));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&probs);
        Ok(())
    })
}

/// Multiple-choice loss for `positive` over `logits[0..n]`.
///
/// # Safety
/// `logits` must hold `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_mc_loss(logits: *const f64, n: usize, positive: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let logits = slice_arg(logits, n, "logits")?;
        *out = retrieval::mc_loss(logits, positive).map_err(invalid)?;
        Ok(())
    })
}

/// Gradient of [`pt_mc_loss`] with respect to the logits, into `out[0..n]`.
///
/// # Safety
/// Both arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_mc_loss_grad(logits: *const f64, n: usize, positive: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let logits = slice_arg(logits, n, "logits")?;
        let grad = retrieval::mc_loss_grad(logits, positive).map_err(invalid)?;
        if out.is_null() {
            return Err(Fail(PtStatus::NullArgument, "`out` is null".into()));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&grad);
        Ok(())
    })
}

/// Cost for `n_cpts` at a flat price per 1,000 CPTs. Amounts are decimal
/// strings such as `"3520"` or `"6.98"`; the result is JSON with amounts in
/// cents, e.g. `{"per_1k_cpts":"$3,520.00","total_for_n":"$38,720.00",...}`.
///
/// # Safety
/// Strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pt_cost_estimate(
    per_1k: *const c_char,
    setup: *const c_char,
    n_cpts: i64,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let per_1k = cost::parse_money(str_arg(per_1k, "per_1k")?).map_err(invalid)?;
        let setup = if setup.is_null() {
            cost::Money::from_integer(0)
        } else {
            cost::parse_money(str_arg(setup, "setup")?).map_err(invalid)?
        };
        let est = cost::cost_estimate(&CostProfile::flat("ffi", per_1k, setup), n_cpts).map_err(invalid)?;
        *out = owned(serde_json::to_string(&est).map_err(invalid)?);
        Ok(())
    })
}

/// Whole-dollar rendering of a decimal amount, e.g. `"38720"` → `"$38,720"`.
///
/// # Safety
/// `amount` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pt_format_dollars(amount: *const c_char, out: *mut *mut c_char) -> PtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = cost::parse_money(str_arg(amount, "amount")?).map_err(invalid)?;
        *out = owned(cost::format_dollars(&m));
        Ok(())
    })
}
