//! C ABI over the laiclab core: opaque handles, integer status codes, and a
//! thread-local message for the last error. Strings returned as `char*` are
//! owned by the caller and must be released with `laiclab_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use laiclab::harness::{
    diagnose_store, oracle_summary_json, run_experiment, run_suite, ExperimentConfig, RecordStore,
};
use laiclab::Error;

/// Status codes returned by every fallible function in this ABI.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LaiclabStatus {
    Ok = 0,
    /// Invalid or inconsistent configuration.
    Config = 1,
    /// Numerical failure (divergence, non-SPD matrix, no convergence).
    Numerical = 2,
    /// File system or serialization failure.
    Io = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
}

/// Opaque parsed experiment configuration.
pub struct LaiclabConfig(ExperimentConfig);

/// Opaque store of completed runs (records plus manifest).
pub struct LaiclabStore(RecordStore);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn status_of(e: &Error) -> LaiclabStatus {
    match e.exit_code() {
        1 => LaiclabStatus::Config,
        3 => LaiclabStatus::Io,
        _ => LaiclabStatus::Numerical,
    }
}

fn fail(e: Error) -> LaiclabStatus {
    set_error(&e.to_string());
    status_of(&e)
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, LaiclabStatus> {
    if ptr.is_null() {
        set_error(&format!("{name} must not be null"));
        return Err(LaiclabStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        LaiclabStatus::InvalidUtf8
    })
}

fn owned_string(text: String) -> *mut c_char {
    match CString::new(text) {
        Ok(s) => s.into_raw(),
        Err(_) => {
            set_error("result contained an interior NUL byte");
            ptr::null_mut()
        }
    }
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn laiclab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn laiclab_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Parse and validate a TOML configuration from memory. Returns null on
/// failure; consult `laiclab_last_error`.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn laiclab_config_parse(text: *const c_char) -> *mut LaiclabConfig {
    let Ok(text) = utf8_arg(text, "text") else {
        return ptr::null_mut();
    };
    match ExperimentConfig::from_toml_str(text) {
        Ok(cfg) => Box::into_raw(Box::new(LaiclabConfig(cfg))),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// Load and validate a TOML configuration file. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn laiclab_config_load(path: *const c_char) -> *mut LaiclabConfig {
    let Ok(path) = utf8_arg(path, "path") else {
        return ptr::null_mut();
    };
    match ExperimentConfig::load(Path::new(path)) {
        Ok(cfg) => Box::into_raw(Box::new(LaiclabConfig(cfg))),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// Release a configuration handle. Null is a no-op.
///
/// # Safety
/// `config` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn laiclab_config_free(config: *mut LaiclabConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured scheme for every replicate. Returns null on failure.
///
/// # Safety
/// `config` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn laiclab_run(config: *const LaiclabConfig) -> *mut LaiclabStore {
    let Some(config) = config.as_ref() else {
        set_error("config must not be null");
        return ptr::null_mut();
    };
    match run_experiment(&config.0) {
        Ok(store) => Box::into_raw(Box::new(LaiclabStore(store))),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// Run every suite scheme against the same simulated worlds. Returns null on
/// failure.
///
/// # Safety
/// `config` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn laiclab_suite(config: *const LaiclabConfig) -> *mut LaiclabStore {
    let Some(config) = config.as_ref() else {
        set_error("config must not be null");
        return ptr::null_mut();
    };
    match run_suite(&config.0) {
        Ok(store) => Box::into_raw(Box::new(LaiclabStore(store))),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// Write a store to a directory (created if missing).
///
/// # Safety
/// `store` must be a live handle; `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn laiclab_store_save(
    store: *const LaiclabStore,
    dir: *const c_char,
) -> LaiclabStatus {
    let Some(store) = store.as_ref() else {
        set_error("store must not be null");
        return LaiclabStatus::NullArgument;
    };
    let dir = match utf8_arg(dir, "dir") {
        Ok(dir) => dir,
        Err(status) => return status,
    };
    match store.0.save(Path::new(dir)) {
        Ok(()) => LaiclabStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Load a store previously written by `laiclab_store_save` or the CLI.
/// Returns null on failure.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn laiclab_store_load(dir: *const c_char) -> *mut LaiclabStore {
    let Ok(dir) = utf8_arg(dir, "dir") else {
        return ptr::null_mut();
    };
    match RecordStore::load(Path::new(dir)) {
        Ok(store) => Box::into_raw(Box::new(LaiclabStore(store))),
        Err(e) => {
            fail(e);
            ptr::null_mut()
        }
    }
}

/// Release a store handle. Null is a no-op.
///
/// # Safety
/// `store` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn laiclab_store_free(store: *mut LaiclabStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Diagnose a store: per-run autocorrelations, whiteness flags, departure
/// statistics, and spatial correlation, as a JSON document. `phase` of zero
/// means no phase stratification. Returns null on failure; free the result
/// with `laiclab_string_free`.
///
/// # Safety
/// `store` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn laiclab_diagnose_json(
    store: *const LaiclabStore,
    lags: usize,
    phase: usize,
) -> *mut c_char {
    let Some(store) = store.as_ref() else {
        set_error("store must not be null");
        return ptr::null_mut();
    };
    let phase = if phase == 0 { None } else { Some(phase) };
    let diagnoses = match diagnose_store(&store.0, lags, phase) {
        Ok(d) => d,
        Err(e) => {
            fail(e);
            return ptr::null_mut();
        }
    };
    match serde_json::to_string_pretty(&diagnoses) {
        Ok(text) => owned_string(text),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Evaluate the exact moment oracle for a linear configuration and return a
/// JSON summary. Returns null on failure; free the result with
/// `laiclab_string_free`.
///
/// # Safety
/// `config` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn laiclab_oracle_json(config: *const LaiclabConfig) -> *mut c_char {
    let Some(config) = config.as_ref() else {
        set_error("config must not be null");
        return ptr::null_mut();
    };
    let summary = match oracle_summary_json(&config.0) {
        Ok(s) => s,
        Err(e) => {
            fail(e);
            return ptr::null_mut();
        }
    };
    match serde_json::to_string_pretty(&summary) {
        Ok(text) => owned_string(text),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn laiclab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
