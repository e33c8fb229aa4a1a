//! C ABI for the perspectives engine.
//!
//! Strings cross the boundary as NUL-terminated UTF-8. Dollar amounts are
//! passed as decimal strings so no precision is lost. Every function returns a
//! [`PerspStatus`]; on failure [`persp_last_error`] describes what went wrong.
//! Strings written to out-parameters are owned by the caller and must be
//! released with [`persp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::str::FromStr;

use perspectives::engine::Engine;
use perspectives::measure::extract_measurements;
use perspectives::policies::{format_multiplier, per_capita, round_sig, DEFAULT_PER_CAPITA_SUFFIX};
use perspectives::{Decimal, Error};

/// Result code returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerspStatus {
    Ok = 0,
    /// The engine answered, but at least one policy could not reach its
    /// embedding provider. The JSON output is still written.
    Degraded = 1,
    NullArgument = 2,
    InvalidUtf8 = 3,
    InvalidArgument = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    ProviderUnavailable = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque engine handle.
pub struct PerspEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PerspStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NonPositive(_)
            | Error::InvalidArgument(_)
            | Error::EmptyText
            | Error::DimensionMismatch { .. }
            | Error::ZeroVector
            | Error::InvalidLabel(_)
            | Error::VariantMismatch { .. } => PerspStatus::InvalidArgument,
            Error::ProviderUnavailable(_) | Error::ProviderMalformed(_) => PerspStatus::ProviderUnavailable,
            Error::Parse { .. } | Error::Json(_) => PerspStatus::Parse,
            Error::Config(_) | Error::ProviderMismatch { .. } | Error::EmptyCorpus | Error::Missing { .. } => {
                PerspStatus::Config
            }
            Error::Io(_) => PerspStatus::Io,
            _ => PerspStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(PerspStatus::InvalidArgument, message.into())
}

/// Runs `f`, records any error for [`persp_last_error`] and turns panics into
/// [`PerspStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<PerspStatus, Failure>) -> PerspStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            PerspStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PerspStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PerspStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn read_decimal(p: *const c_char, name: &str) -> Result<Decimal, Failure> {
    let s = read_str(p, name)?;
    Decimal::from_str(s.trim())
        .or_else(|_| Decimal::from_scientific(s.trim()))
        .map_err(|_| invalid(format!("`{name}` is not a decimal number: {s:?}")))
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(PerspStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(value).map_err(|_| Failure(PerspStatus::Internal, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(PerspStatus::NullArgument, "output pointer is null".into()));
    }
    Ok(())
}

/// Opens an engine from a TOML configuration file.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string. `out_engine` must be
/// valid for writes. The handle must be released with [`persp_engine_free`].
#[no_mangle]
pub unsafe extern "C" fn persp_engine_open(config_path: *const c_char, out_engine: *mut *mut PerspEngine) -> PerspStatus {
    guard(|| {
        check_out(out_engine)?;
        *out_engine = ptr::null_mut();
        let path = read_str(config_path, "config_path")?;
        let inner = Engine::open(Path::new(path))?;
        *out_engine = Box::into_raw(Box::new(PerspEngine { inner }));
        Ok(PerspStatus::Ok)
    })
}

/// Releases an engine. Passing NULL is a no-op.
///
/// # Safety
/// `engine` must be NULL or a handle from [`persp_engine_open`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn persp_engine_free(engine: *mut PerspEngine) {
    if !engine.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(engine))));
    }
}

/// Extracts dollar amounts from `text` and writes the suggestions for each as
/// JSON to `out_json`. Returns [`PerspStatus::Degraded`] when an embedding
/// provider was unreachable; the JSON then lists the warnings.
///
/// # Safety
/// `engine` must be a live handle, `text` a valid NUL-terminated string and
/// `out_json` valid for writes. The engine may be shared across threads.
#[no_mangle]
pub unsafe extern "C" fn persp_engine_suggest_json(
    engine: *const PerspEngine,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> PerspStatus {
    guard(|| {
        check_out(out_json)?;
        *out_json = ptr::null_mut();
        let engine = engine
            .as_ref()
            .ok_or_else(|| Failure(PerspStatus::NullArgument, "`engine` is null".into()))?;
        let text = read_str(text, "text")?;
        let response = engine.inner.perspectives(text)?;
        let degraded = response.provider_unavailable();
        write_string(out_json, serde_json::to_string(&response).map_err(Error::from)?)?;
        if degraded {
            set_last_error("embedding provider unavailable; contextual suggestions omitted");
            Ok(PerspStatus::Degraded)
        } else {
            Ok(PerspStatus::Ok)
        }
    })
}

/// Writes the dollar amounts found in `text` as a JSON array to `out_json`.
/// Spans count Unicode scalar values, not bytes.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out_json` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn persp_extract_json(text: *const c_char, out_json: *mut *mut c_char) -> PerspStatus {
    guard(|| {
        check_out(out_json)?;
        *out_json = ptr::null_mut();
        let text = read_str(text, "text")?;
        let found = extract_measurements(text);
        write_string(out_json, serde_json::to_string(&found).map_err(Error::from)?)?;
        Ok(PerspStatus::Ok)
    })
}

/// Writes the per-capita phrase for `value` dollars over `population` people,
/// for example "about $600 per person in the US".
///
/// # Safety
/// `value` must be a valid NUL-terminated string. `suffix` may be NULL for the
/// default. `out_phrase` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn persp_per_capita(
    value: *const c_char,
    population: u64,
    suffix: *const c_char,
    out_phrase: *mut *mut c_char,
) -> PerspStatus {
    guard(|| {
        check_out(out_phrase)?;
        *out_phrase = ptr::null_mut();
        let value = read_decimal(value, "value")?;
        let suffix = if suffix.is_null() {
            DEFAULT_PER_CAPITA_SUFFIX
        } else {
            read_str(suffix, "suffix")?
        };
        if population == 0 {
            return Err(invalid("population must be positive"));
        }
        let p = per_capita(value, population, suffix)?;
        write_string(out_phrase, p.phrase)?;
        Ok(PerspStatus::Ok)
    })
}

/// Writes the phrase comparing `focal` to a reference object, for example
/// "about 2 times the value of the net worth of Bill Gates".
///
/// # Safety
/// All string arguments must be valid NUL-terminated strings and `out_phrase`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn persp_format_multiplier(
    focal: *const c_char,
    reference_value: *const c_char,
    reference_phrase: *const c_char,
    out_phrase: *mut *mut c_char,
) -> PerspStatus {
    guard(|| {
        check_out(out_phrase)?;
        *out_phrase = ptr::null_mut();
        let focal = read_decimal(focal, "focal")?;
        let reference_value = read_decimal(reference_value, "reference_value")?;
        let phrase = read_str(reference_phrase, "reference_phrase")?;
        let (_, text, _) = format_multiplier(focal, reference_value, phrase)?;
        write_string(out_phrase, text)?;
        Ok(PerspStatus::Ok)
    })
}

/// Rounds `value` to `digits` significant digits, half away from zero, and
/// writes the result as a plain decimal string.
///
/// # Safety
/// `value` must be a valid NUL-terminated string and `out_value` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn persp_round_sig(value: *const c_char, digits: u32, out_value: *mut *mut c_char) -> PerspStatus {
    guard(|| {
        check_out(out_value)?;
        *out_value = ptr::null_mut();
        let value = read_decimal(value, "value")?;
        let rounded = round_sig(value, digits)?;
        write_string(out_value, rounded.normalize().to_string())?;
        Ok(PerspStatus::Ok)
    })
}

/// Message for the most recent failure on the calling thread, or NULL. The
/// pointer stays valid until the next call into this library on the same
/// thread and must not be freed.
#[no_mangle]
pub extern "C" fn persp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string written by this library. Passing NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string returned through an out-parameter of this
/// library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn persp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn persp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
