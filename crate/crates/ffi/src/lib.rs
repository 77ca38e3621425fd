//! C ABI over the run store and provenance queries.
//!
//! Handles are opaque pointers released with their `_free` function.
//! Strings returned through out-parameters are owned by the caller and
//! released with [`prober_string_free`]. After a non-OK status,
//! [`prober_last_error`] describes the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use prober_core::model::{ExecutionBudget, Executor, RecordSet};
use prober_core::store::config::PipelineConfig;
use prober_core::store::{
    run_pipeline, LoadedRun, ProvenanceRequest, StoreError, TraceError, TraceStore,
};
use prober_core::EngineError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProberStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownRun = 4,
    UnknownRecord = 5,
    BudgetExhausted = 6,
    CorruptTrace = 7,
    EngineFailure = 8,
    IoFailure = 9,
    Panic = 10,
}

/// A store root directory.
pub struct ProberStore(TraceStore);

/// A loaded run.
pub struct ProberRun(LoadedRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(ProberStatus, String);

impl From<StoreError> for Fail {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownRun(_) => ProberStatus::UnknownRun,
            StoreError::UnknownNode(_) | StoreError::UnknownRecord { .. } => {
                ProberStatus::UnknownRecord
            }
            StoreError::InvalidRequest(_) | StoreError::Config(_) => ProberStatus::InvalidArgument,
            StoreError::Engine(EngineError::BudgetExhausted { .. }) => {
                ProberStatus::BudgetExhausted
            }
            StoreError::Trace(TraceError::CorruptTrace { .. }) => ProberStatus::CorruptTrace,
            StoreError::Io { .. } | StoreError::Trace(TraceError::Io { .. }) => {
                ProberStatus::IoFailure
            }
            _ => ProberStatus::EngineFailure,
        };
        Fail(status, e.to_string())
    }
}

impl From<TraceError> for Fail {
    fn from(e: TraceError) -> Self {
        StoreError::from(e).into()
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ProberStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ProberStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ProberStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(ProberStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ProberStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn give_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(
            ProberStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    let c = CString::new(s)
        .map_err(|_| Fail(ProberStatus::EngineFailure, "string contains NUL".into()))?;
    // SAFETY: checked non-null above; the caller provides writable storage.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        Err(Fail(
            ProberStatus::NullArgument,
            "output pointer is null".into(),
        ))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn prober_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn prober_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn prober_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens the store rooted at `root`; null means `$PROBER_DATA_DIR`.
///
/// # Safety
/// `root` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn prober_store_open(
    root: *const c_char,
    out: *mut *mut ProberStore,
) -> ProberStatus {
    guard(|| {
        check_out(out)?;
        let store = if root.is_null() {
            TraceStore::from_env()
        } else {
            TraceStore::new(text(root, "root")?)
        };
        *out = Box::into_raw(Box::new(ProberStore(store)));
        Ok(())
    })
}

/// # Safety
/// `store` is null or came from [`prober_store_open`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn prober_store_free(store: *mut ProberStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// JSON array of stored runs.
///
/// # Safety
/// `store` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn prober_store_list_runs(
    store: *const ProberStore,
    out: *mut *mut c_char,
) -> ProberStatus {
    guard(|| {
        let store = store
            .as_ref()
            .ok_or_else(|| Fail(ProberStatus::NullArgument, "store is null".into()))?;
        let runs = store.0.list_runs()?;
        give_string(out, serde_json::to_string(&runs).expect("runs serialize"))
    })
}

/// Executes a pipeline (config JSON plus JSON Lines input for port 0) and
/// stores the trace. `run_id` may be null. The id used is returned.
///
/// # Safety
/// String arguments are NUL-terminated (`run_id` may be null); `store` is
/// a live handle; `out_run_id` is writable.
#[no_mangle]
pub unsafe extern "C" fn prober_run_pipeline(
    store: *const ProberStore,
    config_json: *const c_char,
    input_jsonl: *const c_char,
    run_id: *const c_char,
    out_run_id: *mut *mut c_char,
) -> ProberStatus {
    guard(|| {
        let store = store
            .as_ref()
            .ok_or_else(|| Fail(ProberStatus::NullArgument, "store is null".into()))?;
        let config = PipelineConfig::parse(text(config_json, "config")?)
            .map_err(|e| Fail(ProberStatus::InvalidArgument, e.to_string()))?;
        let input = RecordSet::parse_jsonl(text(input_jsonl, "input")?, 0)
            .map_err(|e| Fail(ProberStatus::InvalidArgument, e.to_string()))?;
        let id = if run_id.is_null() {
            None
        } else {
            Some(text(run_id, "run id")?)
        };
        let (trace, _) = run_pipeline(
            &config,
            None,
            &input,
            &Executor::new(),
            &mut ExecutionBudget::unlimited(),
            id,
            None,
        )?;
        store.0.save(&trace)?;
        give_string(out_run_id, trace.run_id)
    })
}

/// # Safety
/// `store` is a live handle; `run_id` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn prober_run_open(
    store: *const ProberStore,
    run_id: *const c_char,
    out: *mut *mut ProberRun,
) -> ProberStatus {
    guard(|| {
        check_out(out)?;
        let store = store
            .as_ref()
            .ok_or_else(|| Fail(ProberStatus::NullArgument, "store is null".into()))?;
        let run = store.0.open(text(run_id, "run id")?)?;
        *out = Box::into_raw(Box::new(ProberRun(run)));
        Ok(())
    })
}

/// # Safety
/// `run` is null or came from [`prober_run_open`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn prober_run_free(run: *mut ProberRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Answers a provenance request given as JSON, for example
/// `{"record":"d1/s0","kind":"int"}`, with the JSON answer. Cached answers
/// come back byte-identical.
///
/// # Safety
/// `run` is a live handle; `request_json` is NUL-terminated; `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn prober_provenance(
    run: *const ProberRun,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> ProberStatus {
    guard(|| {
        let run = run
            .as_ref()
            .ok_or_else(|| Fail(ProberStatus::NullArgument, "run is null".into()))?;
        let req: ProvenanceRequest = serde_json::from_str(text(request_json, "request")?)
            .map_err(|e| Fail(ProberStatus::InvalidArgument, e.to_string()))?;
        let mut budget = req
            .budget
            .map_or_else(ExecutionBudget::unlimited, ExecutionBudget::with_limit);
        let served = run.0.provenance_get_or_compute(&req, &mut budget)?;
        give_string(out, served.json)
    })
}

/// True executions performed through this run handle so far.
///
/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn prober_run_executions(run: *const ProberRun) -> u64 {
    run.as_ref().map_or(0, |r| r.0.executor().real_executions())
}
