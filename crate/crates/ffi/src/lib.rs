//! C interface to the chat engine.
//!
//! Every fallible function returns a `KgsStatus` code. On failure the message
//! is available from `kgs_last_error` on the same thread until the next call.
//! Strings handed out by the library are released with `kgs_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgselect::chat::{ChatEngine, ChatError};
use kgselect::config::AppConfig;
use kgselect::service::turn_body;

/// Status codes returned across the boundary.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Load = 4,
    EmptyMessage = 5,
    MessageTooLong = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque engine handle.
pub struct KgsEngine {
    inner: ChatEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(KgsStatus, String);

impl From<ChatError> for Failure {
    fn from(e: ChatError) -> Self {
        let code = match e {
            ChatError::EmptyMessage => KgsStatus::EmptyMessage,
            ChatError::TooLong { .. } => KgsStatus::MessageTooLong,
            ChatError::Config(_) => KgsStatus::Config,
            ChatError::Graph(_) | ChatError::Policy(_) | ChatError::Generator(_) => KgsStatus::Load,
            ChatError::Reader(_) => KgsStatus::Internal,
        };
        Failure(code, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KgsStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside kgselect".to_string());
            KgsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to a nul-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KgsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(KgsStatus::InvalidUtf8, format!("{what} is not UTF-8: {e}")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(KgsStatus::Internal, e.to_string()))
}

/// Loads the configuration at `config_path` and the graph, policy and
/// generator it names. On success `*out` receives a handle to release with
/// `kgs_engine_free`.
///
/// # Safety
/// `config_path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_engine_open(config_path: *const c_char, out: *mut *mut KgsEngine) -> KgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(KgsStatus::NullPointer, "out is null".to_string()));
        }
        *out = ptr::null_mut();
        let path = text(config_path, "config_path")?;
        let cfg = AppConfig::load(Path::new(path)).map_err(|e| Failure(KgsStatus::Config, e.to_string()))?;
        cfg.validate().map_err(|e| Failure(KgsStatus::Config, e.to_string()))?;
        let inner = ChatEngine::from_config(&cfg)?;
        *out = Box::into_raw(Box::new(KgsEngine { inner }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from `kgs_engine_open` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgs_engine_free(engine: *mut KgsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Answers one message. On success `*out_json` receives the turn as a JSON
/// object with `response`, `v_start`, `v_selected`, `path` and
/// `knowledge_text`; release it with `kgs_string_free`.
///
/// # Safety
/// `engine` must be a live handle, `message` a nul-terminated string and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_engine_respond(
    engine: *const KgsEngine,
    message: *const c_char,
    out_json: *mut *mut c_char,
) -> KgsStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure(KgsStatus::NullPointer, "out_json is null".to_string()));
        }
        *out_json = ptr::null_mut();
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(KgsStatus::NullPointer, "engine is null".to_string()))?;
        let message = text(message, "message")?;
        let turn = engine.inner.respond(message)?;
        *out_json = into_c_string(turn_body(&engine.inner, &turn).to_string())?;
        Ok(())
    })
}

/// Writes the number of graph vertices to `*out`.
///
/// # Safety
/// `engine` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kgs_engine_vertex_count(engine: *const KgsEngine, out: *mut u64) -> KgsStatus {
    guard(|| {
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(KgsStatus::NullPointer, "engine is null".to_string()))?;
        if out.is_null() {
            return Err(Failure(KgsStatus::NullPointer, "out is null".to_string()));
        }
        *out = engine.inner.graph().num_vertices() as u64;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kgs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn kgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn kgs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
