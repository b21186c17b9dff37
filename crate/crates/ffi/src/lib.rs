//! C interface to kubesteer.
//!
//! Every function returns a [`KsStatus`]. Results that carry data are JSON
//! strings written through an out-pointer; release them with
//! [`ks_string_free`]. On failure, [`ks_last_error`] describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kubesteer_core::config::Settings;
use kubesteer_core::engine::{EngineError, OutcomeKind, WorkflowOutcome};
use kubesteer_core::registry::{AgentName, ToolFilter};
use kubesteer_core::scenario;
use kubesteer_core::system::System;
use serde_json::json;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    SessionBusy = 5,
    NoPendingInterrupt = 6,
    CheckpointMissing = 7,
    NotFound = 8,
    EngineFault = 9,
    Panic = 10,
}

/// Opaque handle to a running system.
pub struct KsSystem {
    inner: System,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(KsStatus, String);

impl From<EngineError> for Fail {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::SessionBusy(_) => KsStatus::SessionBusy,
            EngineError::NoPendingInterrupt(_) => KsStatus::NoPendingInterrupt,
            EngineError::CheckpointMissing(_) => KsStatus::CheckpointMissing,
            EngineError::UnknownRole(_) | EngineError::EmptyInput => KsStatus::InvalidArgument,
            EngineError::UnknownAgent(_) | EngineError::DirectiveUnparseable(_) | EngineError::EngineFault(_) => {
                KsStatus::EngineFault
            }
        };
        Fail(code, e.to_string())
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            KsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(KsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

/// # Safety
/// `sys` must be null or a handle from a `ks_system_new_*` call.
unsafe fn system<'a>(sys: *const KsSystem) -> Result<&'a System, Fail> {
    sys.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| Fail(KsStatus::NullArgument, "system handle is null".into()))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn write_json(out: *mut *mut c_char, value: serde_json::Value) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(KsStatus::NullArgument, "out pointer is null".into()));
    }
    let s = CString::new(value.to_string()).map_err(|e| Fail(KsStatus::EngineFault, e.to_string()))?;
    *out = s.into_raw();
    Ok(())
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn install(out: *mut *mut KsSystem, inner: System) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(KsStatus::NullArgument, "out pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(KsSystem { inner }));
    Ok(())
}

fn outcome_json(o: &WorkflowOutcome) -> serde_json::Value {
    let kind = match o.kind {
        OutcomeKind::Response => "response",
        OutcomeKind::Interrupt => "interrupt",
        OutcomeKind::Rejection => "rejection",
        OutcomeKind::Failure => "failure",
    };
    json!({
        "kind": kind,
        "content": o.content,
        "status": o.state.status,
        "step_counter": o.state.step_counter,
        "pending_interrupt": o.state.pending_interrupt,
    })
}

/// Builds a system from `KUBESTEER_*` environment variables.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_system_new_from_env(out: *mut *mut KsSystem) -> KsStatus {
    guard(|| {
        let settings = Settings::from_env().map_err(|e| Fail(KsStatus::Config, e.to_string()))?;
        let inner = System::build(settings).map_err(|e| Fail(KsStatus::Config, e.to_string()))?;
        install(out, inner)
    })
}

/// Builds a system driven by a scripted scenario (built-in name or file).
/// `data_dir` may be null for in-memory storage.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_system_new_scenario(
    scenario_name: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut KsSystem,
) -> KsStatus {
    guard(|| {
        let name = text(scenario_name, "scenario")?;
        let sc = scenario::load(name).map_err(|e| Fail(KsStatus::NotFound, e.to_string()))?;
        let settings = Settings {
            data_dir: opt_text(data_dir, "data_dir")?.map(PathBuf::from),
            ..Settings::default()
        };
        let inner = System::for_scenario(&sc, settings).map_err(|e| Fail(KsStatus::Config, e.to_string()))?;
        install(out, inner)
    })
}

/// Releases a system handle. Null is ignored.
///
/// # Safety
/// `sys` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_system_free(sys: *mut KsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Runs one turn. `out_json` receives `{kind, content, status, step_counter, pending_interrupt}`.
///
/// # Safety
/// `sys` must be a live handle; strings NUL-terminated; `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ks_run_turn(
    sys: *const KsSystem,
    session_id: *const c_char,
    query: *const c_char,
    role: *const c_char,
    out_json: *mut *mut c_char,
) -> KsStatus {
    guard(|| {
        let s = system(sys)?;
        let o = s
            .engine
            .run_turn(text(session_id, "session_id")?, text(query, "query")?, text(role, "role")?)?;
        write_json(out_json, outcome_json(&o))
    })
}

/// Answers a session's pending interrupt and continues it.
///
/// # Safety
/// As for [`ks_run_turn`].
#[no_mangle]
pub unsafe extern "C" fn ks_resume(
    sys: *const KsSystem,
    session_id: *const c_char,
    input: *const c_char,
    out_json: *mut *mut c_char,
) -> KsStatus {
    guard(|| {
        let s = system(sys)?;
        let o = s.engine.resume(text(session_id, "session_id")?, text(input, "input")?)?;
        write_json(out_json, outcome_json(&o))
    })
}

/// Latest persisted state of a session.
///
/// # Safety
/// As for [`ks_run_turn`].
#[no_mangle]
pub unsafe extern "C" fn ks_session(
    sys: *const KsSystem,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> KsStatus {
    guard(|| {
        let s = system(sys)?;
        let id = text(session_id, "session_id")?;
        let state = s
            .engine
            .session(id)?
            .ok_or_else(|| Fail(KsStatus::NotFound, format!("unknown session {id:?}")))?;
        let value = serde_json::to_value(state).map_err(|e| Fail(KsStatus::EngineFault, e.to_string()))?;
        write_json(out_json, value)
    })
}

/// `{status, components}`.
///
/// # Safety
/// As for [`ks_run_turn`].
#[no_mangle]
pub unsafe extern "C" fn ks_health(sys: *const KsSystem, out_json: *mut *mut c_char) -> KsStatus {
    guard(|| {
        let s = system(sys)?;
        let value = serde_json::to_value(s.health()).map_err(|e| Fail(KsStatus::EngineFault, e.to_string()))?;
        write_json(out_json, value)
    })
}

/// Registered tools, optionally for one agent (`agent` may be null).
///
/// # Safety
/// As for [`ks_run_turn`].
#[no_mangle]
pub unsafe extern "C" fn ks_list_tools(
    sys: *const KsSystem,
    agent: *const c_char,
    out_json: *mut *mut c_char,
) -> KsStatus {
    guard(|| {
        let s = system(sys)?;
        let agent = opt_text(agent, "agent")?
            .map(|a| a.parse::<AgentName>())
            .transpose()
            .map_err(|e| Fail(KsStatus::InvalidArgument, e.to_string()))?;
        let tools = s.engine.registry().list_tools(&ToolFilter { agent, origin: None });
        let value = serde_json::to_value(tools).map_err(|e| Fail(KsStatus::EngineFault, e.to_string()))?;
        write_json(out_json, value)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ks_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
