//! C ABI for embedding the rollout controller in non-Rust services.
//!
//! Everything structured crosses the boundary as JSON strings in the same
//! shapes the Rust API serializes, so the two surfaces cannot drift apart.
//! Handles are opaque; every function returns a status code and reports
//! detail through `rollout_last_error_message`.
//!
//! Ownership rules: strings returned through `char **` out-params belong to
//! the caller and must be released with `rollout_string_free`; controllers
//! must be released with `rollout_controller_free`. Input strings are
//! borrowed for the duration of the call only.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use rollout_core::controller::{
    assign, restore_snapshot, save_snapshot, step, Assignment, MetricEvent, RolloutPlan,
    RolloutState,
};
use rollout_core::stats::{power_query, PowerQuery};
use rollout_core::Error;

/// Status of an FFI call. Everything but `Ok` leaves an explanation in
/// `rollout_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutStatusCode {
    Ok = 0,
    /// Null pointer or non-UTF-8 input.
    InvalidArgument = 1,
    /// Input string is not valid JSON for the expected shape.
    ParseError = 2,
    InvalidConfig = 3,
    InvalidQuery = 4,
    InsufficientData = 5,
    DataQuality = 6,
    /// The rollout already reverted or completed.
    Terminal = 7,
    /// Snapshot does not match this plan or schema.
    SnapshotMismatch = 8,
    Internal = 9,
}

/// Which arm a unit lands in at the current split.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutAssignment {
    Untreated = 0,
    Treatment = 1,
    Control = 2,
}

/// A rollout plan bound to its evolving state.
pub struct RolloutController {
    plan: RolloutPlan,
    state: RolloutState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(e: &Error) -> RolloutStatusCode {
    set_error(&e.to_string());
    match e {
        Error::InvalidConfig(_) => RolloutStatusCode::InvalidConfig,
        Error::InvalidQuery(_) => RolloutStatusCode::InvalidQuery,
        Error::InsufficientData(_) => RolloutStatusCode::InsufficientData,
        Error::DataQuality(_) => RolloutStatusCode::DataQuality,
        Error::Terminal(_) => RolloutStatusCode::Terminal,
        Error::Snapshot(_) => RolloutStatusCode::SnapshotMismatch,
        Error::Parse(_) => RolloutStatusCode::ParseError,
        _ => RolloutStatusCode::Internal,
    }
}

fn invalid_argument(msg: &str) -> RolloutStatusCode {
    set_error(msg);
    RolloutStatusCode::InvalidArgument
}

fn parse_error(what: &str, e: &serde_json::Error) -> RolloutStatusCode {
    set_error(&format!("{what}: {e}"));
    RolloutStatusCode::ParseError
}

/// # Safety
/// `p` must be null or point at a NUL-terminated string.
unsafe fn required_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, RolloutStatusCode> {
    if p.is_null() {
        return Err(invalid_argument(&format!("{what} must not be null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid_argument(&format!("{what} must be valid UTF-8")))
}

fn give_string(out: *mut *mut c_char, s: String) -> RolloutStatusCode {
    // JSON output cannot contain NUL, so this only fails on a null out-param
    if out.is_null() {
        return invalid_argument("output pointer must not be null");
    }
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            RolloutStatusCode::Ok
        }
        Err(_) => {
            set_error("output contained an interior NUL byte");
            RolloutStatusCode::Internal
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn rollout_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rollout_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn rollout_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Create a controller from a plan (JSON) with a fresh state at the plan's
/// initial treatment percentage.
///
/// # Safety
/// `plan_json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_new(
    plan_json: *const c_char,
    out: *mut *mut RolloutController,
) -> RolloutStatusCode {
    if out.is_null() {
        return invalid_argument("out must not be null");
    }
    let raw = match required_str(plan_json, "plan_json") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let plan: RolloutPlan = match serde_json::from_str(raw) {
        Ok(p) => p,
        Err(e) => return parse_error("plan", &e),
    };
    let state = match RolloutState::new(&plan) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    *out = Box::into_raw(Box::new(RolloutController { plan, state }));
    RolloutStatusCode::Ok
}

/// Create a controller by resuming a snapshot produced by
/// `rollout_controller_snapshot` under the same plan.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_restore(
    plan_json: *const c_char,
    snapshot_json: *const c_char,
    out: *mut *mut RolloutController,
) -> RolloutStatusCode {
    if out.is_null() {
        return invalid_argument("out must not be null");
    }
    let raw_plan = match required_str(plan_json, "plan_json") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let raw_snapshot = match required_str(snapshot_json, "snapshot_json") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let plan: RolloutPlan = match serde_json::from_str(raw_plan) {
        Ok(p) => p,
        Err(e) => return parse_error("plan", &e),
    };
    let state = match restore_snapshot(&plan, raw_snapshot) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    *out = Box::into_raw(Box::new(RolloutController { plan, state }));
    RolloutStatusCode::Ok
}

/// Release a controller. Null is a no-op.
///
/// # Safety
/// `c` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_free(c: *mut RolloutController) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Advance the rollout by one hour. `events_json` is a JSON array of
/// `{metric, unit_id, group, value}` records for that hour; null means the
/// hour passed without observations. On success `decision_out` receives the
/// decision as JSON (for example `"stay"` or `{"ramp_to":{"pct":0.2}}`).
///
/// # Safety
/// `c` must be a live controller; `decision_out`, when non-null, must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_step(
    c: *mut RolloutController,
    hour: u32,
    events_json: *const c_char,
    decision_out: *mut *mut c_char,
) -> RolloutStatusCode {
    let Some(ctl) = c.as_mut() else {
        return invalid_argument("controller must not be null");
    };
    let events: Vec<MetricEvent> = if events_json.is_null() {
        Vec::new()
    } else {
        let raw = match required_str(events_json, "events_json") {
            Ok(s) => s,
            Err(code) => return code,
        };
        match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => return parse_error("events", &e),
        }
    };
    let decision = match step(&ctl.plan, &mut ctl.state, hour, &events) {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    if decision_out.is_null() {
        return RolloutStatusCode::Ok;
    }
    match serde_json::to_string(&decision) {
        Ok(json) => give_string(decision_out, json),
        Err(e) => fail(&e.into()),
    }
}

/// Serialize the controller state as a snapshot (JSON).
///
/// # Safety
/// `c` must be a live controller; `snapshot_out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_snapshot(
    c: *const RolloutController,
    snapshot_out: *mut *mut c_char,
) -> RolloutStatusCode {
    let Some(ctl) = c.as_ref() else {
        return invalid_argument("controller must not be null");
    };
    match save_snapshot(&ctl.plan, &ctl.state) {
        Ok(json) => give_string(snapshot_out, json),
        Err(e) => fail(&e),
    }
}

/// Hashed sticky assignment of one unit at the current split.
///
/// # Safety
/// `c` must be a live controller; `unit_id` a NUL-terminated string;
/// `assignment_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_assign(
    c: *const RolloutController,
    unit_id: *const c_char,
    assignment_out: *mut RolloutAssignment,
) -> RolloutStatusCode {
    let Some(ctl) = c.as_ref() else {
        return invalid_argument("controller must not be null");
    };
    if assignment_out.is_null() {
        return invalid_argument("assignment_out must not be null");
    }
    let unit = match required_str(unit_id, "unit_id") {
        Ok(s) => s,
        Err(code) => return code,
    };
    *assignment_out = match assign(&ctl.plan, &ctl.state, unit) {
        Assignment::Untreated => RolloutAssignment::Untreated,
        Assignment::Treatment => RolloutAssignment::Treatment,
        Assignment::Control => RolloutAssignment::Control,
    };
    RolloutStatusCode::Ok
}

/// Current treatment share in [0, 1].
///
/// # Safety
/// `c` must be a live controller; `pct_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_controller_treatment_pct(
    c: *const RolloutController,
    pct_out: *mut f64,
) -> RolloutStatusCode {
    let Some(ctl) = c.as_ref() else {
        return invalid_argument("controller must not be null");
    };
    if pct_out.is_null() {
        return invalid_argument("pct_out must not be null");
    }
    *pct_out = ctl.state.treatment_pct;
    RolloutStatusCode::Ok
}

/// Sample size / power queries. Input is a `PowerQuery` (JSON), for example
/// `{"delta":0.05,"alpha":0.05,"v_ctrl":0.21,"v_trt":0.21,"target":{"beta":0.1}}`;
/// output is the matching `PowerAnswer` (JSON).
///
/// # Safety
/// `query_json` must be a NUL-terminated string; `answer_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rollout_power_query(
    query_json: *const c_char,
    answer_out: *mut *mut c_char,
) -> RolloutStatusCode {
    let raw = match required_str(query_json, "query_json") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let query: PowerQuery = match serde_json::from_str(raw) {
        Ok(q) => q,
        Err(e) => return parse_error("query", &e),
    };
    let answer = match power_query(&query) {
        Ok(a) => a,
        Err(e) => return fail(&e),
    };
    match serde_json::to_string(&answer) {
        Ok(json) => give_string(answer_out, json),
        Err(e) => fail(&e.into()),
    }
}
