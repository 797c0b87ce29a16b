//! C ABI for the crsfl simulator.
//!
//! Every fallible function returns a [`CrsflStatus`] and writes results
//! through out-pointers. On failure the calling thread's last error message
//! is set; read it with [`crsfl_last_error_message`]. Objects are opaque
//! handles created by `*_new`/`*_issue`/`*_compress` functions and released
//! with the matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crsfl::engine;
use crsfl::EngineError;
use crsfl::metrics::{self, RoundMetrics};
use crsfl::privacy::{self, PrivacyCertificate};
use crsfl::rng::{self, Purpose, Stream};
use crsfl::sampler::{self, CrsScaling, SamplerState};
use crsfl::{ExperimentConfig, SamplerConfig, SamplerKind, SparseUpdate};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrsflStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument such as a non-UTF-8 string or a length mismatch.
    InvalidArgument = 2,
    /// Rejected configuration, privacy request or sampler parameters.
    Refused = 3,
    /// Failure while running: data I/O, divergence, CSV output.
    RuntimeFailure = 4,
    /// The output buffer is too small; the required size was written.
    BufferTooSmall = 5,
    /// The experiment has not been run yet.
    NotRun = 6,
    Panic = 7,
}

/// Compressor selector for [`crsfl_sampler_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrsflSamplerKind {
    Identity = 0,
    Crs = 1,
    MinMax = 2,
    GSpar = 3,
    TopK = 4,
    Poisson = 5,
}

impl From<CrsflSamplerKind> for SamplerKind {
    fn from(k: CrsflSamplerKind) -> Self {
        match k {
            CrsflSamplerKind::Identity => SamplerKind::Identity,
            CrsflSamplerKind::Crs => SamplerKind::Crs,
            CrsflSamplerKind::MinMax => SamplerKind::MinMax,
            CrsflSamplerKind::GSpar => SamplerKind::GSpar,
            CrsflSamplerKind::TopK => SamplerKind::TopK,
            CrsflSamplerKind::Poisson => SamplerKind::Poisson,
        }
    }
}

/// A privacy certificate, issued or refused.
pub struct CrsflCertificate(PrivacyCertificate);

/// A compressor with its own random stream and Top-K residual.
pub struct CrsflSampler {
    config: SamplerConfig,
    state: SamplerState,
    rng: Stream,
}

/// One compressed update.
pub struct CrsflUpdate(SparseUpdate);

/// A parsed experiment and, once run, its per-round metrics.
pub struct CrsflExperiment {
    config: ExperimentConfig,
    history: Option<Vec<RoundMetrics>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: CrsflStatus, msg: impl Into<String>) -> CrsflStatus {
    set_error(msg);
    status
}

fn engine_status(e: &EngineError) -> CrsflStatus {
    if e.is_refusal() {
        CrsflStatus::Refused
    } else {
        CrsflStatus::RuntimeFailure
    }
}

/// Run `f`, converting a panic into [`CrsflStatus::Panic`].
fn guard(f: impl FnOnce() -> CrsflStatus) -> CrsflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CrsflStatus::Panic, msg)
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(CrsflStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, CrsflStatus> {
    // SAFETY: caller guarantees `p` is a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(CrsflStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

fn into_handle<T>(value: T, out: *mut *mut T) {
    // SAFETY: `out` checked non-null by the caller.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

unsafe fn drop_handle<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Copy `src` into `out[..cap]`, writing `src.len()` to `len_out`.
unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize, len_out: *mut usize) -> CrsflStatus {
    if !len_out.is_null() {
        // SAFETY: non-null, caller-provided.
        unsafe { *len_out = src.len() };
    }
    if src.len() > cap {
        return fail(
            CrsflStatus::BufferTooSmall,
            format!("buffer holds {cap} elements, {} needed", src.len()),
        );
    }
    if !src.is_empty() {
        if out.is_null() {
            return fail(CrsflStatus::NullPointer, "`out` is null");
        }
        // SAFETY: `out` has room for `cap >= src.len()` elements.
        unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    }
    CrsflStatus::Ok
}

// Errors ---------------------------------------------------------------------

/// Message for the last failed call on this thread, or NULL if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crsfl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn crsfl_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crsfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Privacy --------------------------------------------------------------------

/// `p_max = 1 − e^{−ε}`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_max_sampling_probability(epsilon: f64, out: *mut f64) -> CrsflStatus {
    non_null!(out);
    guard(|| match privacy::max_sampling_probability(epsilon) {
        Ok(v) => {
            unsafe { *out = v };
            CrsflStatus::Ok
        }
        Err(e) => fail(CrsflStatus::Refused, e.to_string()),
    })
}

/// Largest admissible `K` for `(ε, p, d)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_max_sampling_size(epsilon: f64, p: f64, d: usize, out: *mut usize) -> CrsflStatus {
    non_null!(out);
    guard(|| match privacy::max_sampling_size(epsilon, p, d) {
        Ok(v) => {
            unsafe { *out = v };
            CrsflStatus::Ok
        }
        Err(e) => fail(CrsflStatus::Refused, e.to_string()),
    })
}

/// Check `(ε, p, K, d)` and build a certificate. A refused request still
/// yields a handle with `issued = false` and status `Ok`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_certificate_issue(
    epsilon: f64,
    p: f64,
    k: usize,
    d: usize,
    out: *mut *mut CrsflCertificate,
) -> CrsflStatus {
    non_null!(out);
    guard(|| {
        into_handle(CrsflCertificate(privacy::issue_certificate(epsilon, p, k, d)), out);
        CrsflStatus::Ok
    })
}

/// # Safety
/// `cert` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_certificate_is_issued(cert: *const CrsflCertificate) -> bool {
    unsafe { cert.as_ref() }.is_some_and(|c| c.0.issued)
}

/// δ bound and its natural log.
///
/// # Safety
/// `cert` must be a live handle; the out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_certificate_delta(
    cert: *const CrsflCertificate,
    delta_out: *mut f64,
    log_delta_out: *mut f64,
) -> CrsflStatus {
    non_null!(cert);
    let c = unsafe { &(*cert).0 };
    if !delta_out.is_null() {
        unsafe { *delta_out = c.delta_bound };
    }
    if !log_delta_out.is_null() {
        unsafe { *log_delta_out = c.log_delta_bound };
    }
    CrsflStatus::Ok
}

/// Refusal reason for a refused certificate, NULL when issued. The string
/// lives as long as the calling thread's last error message.
///
/// # Safety
/// `cert` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crsfl_certificate_refusal(cert: *const CrsflCertificate) -> *const c_char {
    match unsafe { cert.as_ref() }.and_then(|c| c.0.refusal.as_ref()) {
        Some(r) => {
            set_error(r.to_string());
            crsfl_last_error_message()
        }
        None => std::ptr::null(),
    }
}

/// # Safety
/// `cert` must be a handle from [`crsfl_certificate_issue`] or NULL, freed once.
#[no_mangle]
pub unsafe extern "C" fn crsfl_certificate_free(cert: *mut CrsflCertificate) {
    unsafe { drop_handle(cert) }
}

// Samplers -------------------------------------------------------------------

/// Create a compressor for gradients of length `dim`. `epsilon` is required
/// for CRS and ignored otherwise; pass a non-positive value for none.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn crsfl_sampler_new(
    kind: CrsflSamplerKind,
    k: usize,
    p: f64,
    epsilon: f64,
    feedback: bool,
    dim: usize,
    seed: u64,
    out: *mut *mut CrsflSampler,
) -> CrsflStatus {
    non_null!(out);
    guard(|| {
        let config = SamplerConfig {
            feedback,
            epsilon: (epsilon > 0.0).then_some(epsilon),
            crs_scaling: CrsScaling::Conditional,
            ..SamplerConfig::new(kind.into(), k, p)
        };
        if let Err(e) = config.validate(dim) {
            return fail(CrsflStatus::Refused, e.to_string());
        }
        let s = CrsflSampler {
            config,
            state: SamplerState::new(dim),
            rng: rng::stream(seed, Purpose::ClientRound, &[]),
        };
        into_handle(s, out);
        CrsflStatus::Ok
    })
}

/// Compress `g[..len]`. Each call draws fresh randomness from the sampler's
/// stream.
///
/// # Safety
/// `sampler` must be live, `g` valid for `len` reads, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_sampler_compress(
    sampler: *mut CrsflSampler,
    g: *const f64,
    len: usize,
    out: *mut *mut CrsflUpdate,
) -> CrsflStatus {
    non_null!(sampler, g, out);
    guard(|| {
        let s = unsafe { &mut *sampler };
        let g = unsafe { std::slice::from_raw_parts(g, len) };
        match sampler::compress(&s.config, g, &mut s.state, &mut s.rng) {
            Ok(u) => {
                into_handle(CrsflUpdate(u), out);
                CrsflStatus::Ok
            }
            Err(e) => fail(CrsflStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `sampler` must be a handle from [`crsfl_sampler_new`] or NULL, freed once.
#[no_mangle]
pub unsafe extern "C" fn crsfl_sampler_free(sampler: *mut CrsflSampler) {
    unsafe { drop_handle(sampler) }
}

// Updates --------------------------------------------------------------------

/// Number of transmitted coordinates; 0 for NULL.
///
/// # Safety
/// `u` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_len(u: *const CrsflUpdate) -> usize {
    unsafe { u.as_ref() }.map_or(0, |u| u.0.len())
}

/// Dense dimension; 0 for NULL.
///
/// # Safety
/// `u` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_dim(u: *const CrsflUpdate) -> usize {
    unsafe { u.as_ref() }.map_or(0, |u| u.0.dim())
}

/// Encoded size in bytes.
///
/// # Safety
/// `u` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_payload_bytes(u: *const CrsflUpdate) -> usize {
    unsafe { u.as_ref() }.map_or(0, |u| u.0.payload_bytes())
}

/// Copy the indices into `out[..cap]`; `len_out` receives the count.
///
/// # Safety
/// `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_indices(
    u: *const CrsflUpdate,
    out: *mut u32,
    cap: usize,
    len_out: *mut usize,
) -> CrsflStatus {
    non_null!(u);
    unsafe { copy_out((*u).0.indices(), out, cap, len_out) }
}

/// Copy the values into `out[..cap]`; `len_out` receives the count.
///
/// # Safety
/// `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_values(
    u: *const CrsflUpdate,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> CrsflStatus {
    non_null!(u);
    unsafe { copy_out((*u).0.values(), out, cap, len_out) }
}

/// Write the dense vector into `out[..cap]`; `len_out` receives the dimension.
///
/// # Safety
/// `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_densify(
    u: *const CrsflUpdate,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> CrsflStatus {
    non_null!(u);
    guard(|| unsafe { copy_out((*u).0.densify().as_slice(), out, cap, len_out) })
}

/// Encode to the wire format into `out[..cap]`; `len_out` receives the size.
///
/// # Safety
/// `u` must be live; `out` valid for `cap` writes; `len_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_encode(
    u: *const CrsflUpdate,
    out: *mut u8,
    cap: usize,
    len_out: *mut usize,
) -> CrsflStatus {
    non_null!(u);
    guard(|| unsafe { copy_out(&(*u).0.to_bytes(), out, cap, len_out) })
}

/// Decode a wire-format buffer.
///
/// # Safety
/// `bytes` valid for `len` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_decode(
    bytes: *const u8,
    len: usize,
    out: *mut *mut CrsflUpdate,
) -> CrsflStatus {
    non_null!(bytes, out);
    guard(|| {
        let b = unsafe { std::slice::from_raw_parts(bytes, len) };
        match SparseUpdate::from_bytes(b) {
            Ok(u) => {
                into_handle(CrsflUpdate(u), out);
                CrsflStatus::Ok
            }
            Err(e) => fail(CrsflStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `u` must be a handle from this library or NULL, freed once.
#[no_mangle]
pub unsafe extern "C" fn crsfl_update_free(u: *mut CrsflUpdate) {
    unsafe { drop_handle(u) }
}

// Experiments ----------------------------------------------------------------

/// Parse a `key = value` config text.
///
/// # Safety
/// `text` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_new(text: *const c_char, out: *mut *mut CrsflExperiment) -> CrsflStatus {
    non_null!(text, out);
    guard(|| {
        let text = match unsafe { str_arg(text, "text") } {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::parse_str(text) {
            Ok(config) => {
                into_handle(CrsflExperiment { config, history: None }, out);
                CrsflStatus::Ok
            }
            Err(e) => fail(CrsflStatus::Refused, e.to_string()),
        }
    })
}

/// Run the experiment with `threads` workers (0 for the default pool).
///
/// # Safety
/// `exp` must be live.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_run(exp: *mut CrsflExperiment, threads: usize) -> CrsflStatus {
    non_null!(exp);
    guard(|| {
        let e = unsafe { &mut *exp };
        match engine::run_experiment_with_threads(&e.config, (threads > 0).then_some(threads)) {
            Ok(h) => {
                e.history = Some(h);
                CrsflStatus::Ok
            }
            Err(err) => fail(engine_status(&err), err.to_string()),
        }
    })
}

fn history<'a>(exp: *const CrsflExperiment) -> Result<&'a [RoundMetrics], CrsflStatus> {
    if exp.is_null() {
        return Err(fail(CrsflStatus::NullPointer, "`exp` is null"));
    }
    // SAFETY: non-null live handle per the caller contract.
    unsafe { (*exp).history.as_deref() }.ok_or_else(|| fail(CrsflStatus::NotRun, "experiment has not been run"))
}

/// Final accuracy, overall transmission in bytes per client, and accuracy
/// per MiB of transmission. Any out-pointer may be NULL.
///
/// # Safety
/// `exp` must be live; out-pointers NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_summary(
    exp: *const CrsflExperiment,
    accuracy_out: *mut f64,
    ot_bytes_out: *mut f64,
    acc_per_ot_out: *mut f64,
) -> CrsflStatus {
    let h = match history(exp) {
        Ok(h) => h,
        Err(s) => return s,
    };
    let (acc, ot, per) = crsfl::cli::summarize(h);
    for (p, v) in [(accuracy_out, acc), (ot_bytes_out, ot), (acc_per_ot_out, per)] {
        if !p.is_null() {
            unsafe { *p = v };
        }
    }
    CrsflStatus::Ok
}

/// Number of completed rounds, 0 before the run.
///
/// # Safety
/// `exp` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_rounds(exp: *const CrsflExperiment) -> usize {
    unsafe { exp.as_ref() }
        .and_then(|e| e.history.as_ref())
        .map_or(0, Vec::len)
}

/// Write the per-round CSV to `path`.
///
/// # Safety
/// `exp` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_write_csv(exp: *const CrsflExperiment, path: *const c_char) -> CrsflStatus {
    non_null!(path);
    guard(|| {
        let h = match history(exp) {
            Ok(h) => h,
            Err(s) => return s,
        };
        let path = match unsafe { str_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match metrics::emit_csv(h, Path::new(path)) {
            Ok(()) => CrsflStatus::Ok,
            Err(e) => fail(CrsflStatus::RuntimeFailure, e.to_string()),
        }
    })
}

/// # Safety
/// `exp` must be a handle from [`crsfl_experiment_new`] or NULL, freed once.
#[no_mangle]
pub unsafe extern "C" fn crsfl_experiment_free(exp: *mut CrsflExperiment) {
    unsafe { drop_handle(exp) }
}
