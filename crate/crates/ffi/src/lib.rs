//! C ABI for the gridphasor analytics engine.
//!
//! Conventions:
//! * every fallible function returns a [`GpStatus`]; outputs go through
//!   pointers that are written only on `GP_STATUS_OK`;
//! * the store is an opaque handle created by `gp_store_open` /
//!   `gp_store_in_memory` and released with `gp_store_close`;
//! * arrays returned by query functions are allocated by this library and
//!   must be released with the matching `gp_free_*` function;
//! * angles are radians, timestamps are nanoseconds, stream keys are the
//!   canonical `meter/channel/phase` strings of the engine;
//! * `gp_last_error` returns a thread-local message describing the most
//!   recent failure in the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use gridphasor_core::phasor;
use gridphasor_core::scenario::{run_scenario, Scenario};
use gridphasor_core::store::{Store, StoreError, StreamKey, VersionId};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

/// Outcome of a call. Non-zero values describe the failure class; the
/// thread-local `gp_last_error` message carries the detail.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpStatus {
    Ok = 0,
    /// A pointer was null or an argument failed validation.
    InvalidArgument = 1,
    /// Unknown stream, version, or file.
    NotFound = 2,
    /// Conflicting input, e.g. duplicate timestamps in one batch.
    Conflict = 3,
    /// The computation could not be completed.
    Runtime = 4,
    /// I/O failure.
    Io = 5,
}

fn status_of(err: &StoreError) -> GpStatus {
    match err {
        StoreError::UnknownStream(_) | StoreError::UnknownVersion(..) => GpStatus::NotFound,
        StoreError::BatchConflict(_) => GpStatus::Conflict,
        StoreError::Io(_) => GpStatus::Io,
        StoreError::InvalidPointwidth(_)
        | StoreError::InvalidRange(..)
        | StoreError::InvalidKey(_)
        | StoreError::OutOfRange(_)
        | StoreError::InvalidValue(_)
        | StoreError::VersionOrder(..)
        | StoreError::TooManyWindows(_) => GpStatus::InvalidArgument,
        StoreError::Corrupt(_) => GpStatus::Runtime,
    }
}

/// Message describing the most recent failure in this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, GpStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(GpStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        GpStatus::InvalidArgument
    })
}

unsafe fn parse_key(ptr: *const c_char) -> Result<StreamKey, GpStatus> {
    let s = cstr(ptr, "stream key")?;
    s.parse::<StreamKey>().map_err(|e| {
        set_error(e);
        GpStatus::InvalidArgument
    })
}

macro_rules! out_write {
    ($ptr:expr, $value:expr, $what:expr) => {
        if $ptr.is_null() {
            set_error(concat!($what, " output pointer is null"));
            return GpStatus::InvalidArgument;
        } else {
            *$ptr = $value;
        }
    };
}

// ---------------------------------------------------------------------------
// Phasor math
// ---------------------------------------------------------------------------

/// Wrap an angle to the half-open interval (-pi, pi].
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn gp_wrap_angle(theta: f64, out: *mut f64) -> GpStatus {
    match phasor::wrap_angle(theta) {
        Ok(v) => {
            out_write!(out, v, "wrap_angle");
            GpStatus::Ok
        }
        Err(e) => {
            set_error(e);
            GpStatus::InvalidArgument
        }
    }
}

/// Wrapped angle difference `a - b` in (-pi, pi].
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn gp_angle_diff(a: f64, b: f64, out: *mut f64) -> GpStatus {
    match phasor::angle_diff(a, b) {
        Ok(v) => {
            out_write!(out, v, "angle_diff");
            GpStatus::Ok
        }
        Err(e) => {
            set_error(e);
            GpStatus::InvalidArgument
        }
    }
}

/// Total vector error between a measured and a reference phasor
/// (magnitudes RMS, angles radians).
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn gp_tve(
    measured_mag: f64,
    measured_ang: f64,
    reference_mag: f64,
    reference_ang: f64,
    out: *mut f64,
) -> GpStatus {
    let build = |m: f64, a: f64| phasor::Phasor::new(m, a);
    match (build(measured_mag, measured_ang), build(reference_mag, reference_ang)) {
        (Ok(m), Ok(r)) => match phasor::tve(m, r) {
            Ok(v) => {
                out_write!(out, v, "tve");
                GpStatus::Ok
            }
            Err(e) => {
                set_error(e);
                GpStatus::InvalidArgument
            }
        },
        (Err(e), _) | (_, Err(e)) => {
            set_error(e);
            GpStatus::InvalidArgument
        }
    }
}

/// Transmission power transfer approximation `(v1*v2/x) sin(delta)`.
///
/// # Safety
/// `out` must point to writable memory for one f64.
#[no_mangle]
pub unsafe extern "C" fn gp_power_flow_approx(
    v1: f64,
    v2: f64,
    x: f64,
    delta: f64,
    out: *mut f64,
) -> GpStatus {
    match phasor::power_flow_approx(v1, v2, x, delta) {
        Ok(v) => {
            out_write!(out, v, "power_flow_approx");
            GpStatus::Ok
        }
        Err(e) => {
            set_error(e);
            GpStatus::InvalidArgument
        }
    }
}

/// Single-bin DFT phasor of one nominal cycle of waveform samples
/// (RMS magnitude, cosine-referenced angle).
///
/// # Safety
/// `samples` must point to `len` readable f64 values; `out_mag` and
/// `out_ang` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_estimate_phasor(
    samples: *const f64,
    len: usize,
    nominal_freq: f64,
    out_mag: *mut f64,
    out_ang: *mut f64,
) -> GpStatus {
    if samples.is_null() {
        set_error("samples pointer is null");
        return GpStatus::InvalidArgument;
    }
    let window = std::slice::from_raw_parts(samples, len);
    match phasor::estimate_phasor(window, nominal_freq) {
        Ok(p) => {
            out_write!(out_mag, p.magnitude(), "estimate_phasor magnitude");
            out_write!(out_ang, p.angle(), "estimate_phasor angle");
            GpStatus::Ok
        }
        Err(e) => {
            set_error(e);
            GpStatus::InvalidArgument
        }
    }
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

/// Opaque handle to an open store.
pub struct GpStore {
    inner: Store,
}

/// Open (or create) a store directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable. The returned
/// handle must be released with `gp_store_close`.
#[no_mangle]
pub unsafe extern "C" fn gp_store_open(dir: *const c_char, out: *mut *mut GpStore) -> GpStatus {
    let dir = match cstr(dir, "store dir") {
        Ok(d) => d,
        Err(s) => return s,
    };
    match Store::open(Path::new(dir)) {
        Ok(inner) => {
            out_write!(out, Box::into_raw(Box::new(GpStore { inner })), "store");
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Create an ephemeral in-memory store.
///
/// # Safety
/// `out` must be writable; release the handle with `gp_store_close`.
#[no_mangle]
pub unsafe extern "C" fn gp_store_in_memory(out: *mut *mut GpStore) -> GpStatus {
    out_write!(
        out,
        Box::into_raw(Box::new(GpStore {
            inner: Store::in_memory(),
        })),
        "store"
    );
    GpStatus::Ok
}

/// Release a store handle. Null is a no-op.
///
/// # Safety
/// `store` must be a handle returned by this library, not yet closed.
#[no_mangle]
pub unsafe extern "C" fn gp_store_close(store: *mut GpStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

unsafe fn store_ref<'a>(store: *const GpStore) -> Result<&'a Store, GpStatus> {
    if store.is_null() {
        set_error("store handle is null");
        return Err(GpStatus::InvalidArgument);
    }
    Ok(&(*store).inner)
}

/// Insert a batch of points; the new version number is written to
/// `out_version`.
///
/// # Safety
/// `timestamps` and `values` must each point to `len` readable elements;
/// `key` must be NUL-terminated; `out_version` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_store_insert(
    store: *const GpStore,
    key: *const c_char,
    timestamps: *const i64,
    values: *const f64,
    len: usize,
    out_version: *mut u64,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let key = match parse_key(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    if len > 0 && (timestamps.is_null() || values.is_null()) {
        set_error("point arrays are null");
        return GpStatus::InvalidArgument;
    }
    let ts = std::slice::from_raw_parts(timestamps, len);
    let vs = std::slice::from_raw_parts(values, len);
    let points: Vec<(i64, f64)> = ts.iter().copied().zip(vs.iter().copied()).collect();
    match store.insert(&key, &points) {
        Ok(v) => {
            out_write!(out_version, v.0, "version");
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Latest committed version of a stream.
///
/// # Safety
/// `key` must be NUL-terminated; `out_version` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_store_latest_version(
    store: *const GpStore,
    key: *const c_char,
    out_version: *mut u64,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let key = match parse_key(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    match store.latest_version(&key) {
        Ok(v) => {
            out_write!(out_version, v.0, "version");
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Raw points of `[t0, t1)` at a version. On success `*out_timestamps` and
/// `*out_values` hold `*out_len` elements; release both with
/// `gp_free_points`.
///
/// # Safety
/// All output pointers must be writable; `key` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gp_store_query_raw(
    store: *const GpStore,
    key: *const c_char,
    t0: i64,
    t1: i64,
    version: u64,
    out_timestamps: *mut *mut i64,
    out_values: *mut *mut f64,
    out_len: *mut usize,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let key = match parse_key(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    if out_timestamps.is_null() || out_values.is_null() || out_len.is_null() {
        set_error("output pointers are null");
        return GpStatus::InvalidArgument;
    }
    match store.query_raw(&key, t0, t1, VersionId(version)) {
        Ok(points) => {
            let mut ts: Vec<i64> = points.iter().map(|p| p.0).collect();
            let mut vs: Vec<f64> = points.iter().map(|p| p.1).collect();
            ts.shrink_to_fit();
            vs.shrink_to_fit();
            *out_len = points.len();
            let mut ts = std::mem::ManuallyDrop::new(ts.into_boxed_slice());
            let mut vs = std::mem::ManuallyDrop::new(vs.into_boxed_slice());
            *out_timestamps = ts.as_mut_ptr();
            *out_values = vs.as_mut_ptr();
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Release arrays returned by `gp_store_query_raw`.
///
/// # Safety
/// Pass exactly the pointers and length produced by one successful
/// `gp_store_query_raw` call; do not use them afterwards.
#[no_mangle]
pub unsafe extern "C" fn gp_free_points(timestamps: *mut i64, values: *mut f64, len: usize) {
    if !timestamps.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(timestamps, len)));
    }
    if !values.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(values, len)));
    }
}

/// One aligned statistics window. When `count` is zero the min/max/mean
/// fields are meaningless and set to zero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpStatPoint {
    pub window_start_ns: i64,
    pub pointwidth: u32,
    pub count: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Windowed statistics on the aligned `2^pointwidth` grid covering
/// `[t0, t1)`. Release the array with `gp_free_stat_points`.
///
/// # Safety
/// Output pointers must be writable; `key` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gp_store_query_windows(
    store: *const GpStore,
    key: *const c_char,
    t0: i64,
    t1: i64,
    pointwidth: u8,
    version: u64,
    out_points: *mut *mut GpStatPoint,
    out_len: *mut usize,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let key = match parse_key(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    if out_points.is_null() || out_len.is_null() {
        set_error("output pointers are null");
        return GpStatus::InvalidArgument;
    }
    match store.query_windows(&key, t0, t1, pointwidth, VersionId(version)) {
        Ok(wins) => {
            let out: Vec<GpStatPoint> = wins
                .iter()
                .map(|w| GpStatPoint {
                    window_start_ns: w.window_start,
                    pointwidth: w.pointwidth as u32,
                    count: w.count,
                    min: w.min.unwrap_or(0.0),
                    max: w.max.unwrap_or(0.0),
                    mean: w.mean.unwrap_or(0.0),
                })
                .collect();
            *out_len = out.len();
            let mut out = std::mem::ManuallyDrop::new(out.into_boxed_slice());
            *out_points = out.as_mut_ptr();
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Release an array returned by `gp_store_query_windows`.
///
/// # Safety
/// Pass exactly the pointer and length produced by one successful call.
#[no_mangle]
pub unsafe extern "C" fn gp_free_stat_points(points: *mut GpStatPoint, len: usize) {
    if !points.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(points, len)));
    }
}

/// Half-open changed interval in nanoseconds.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GpTimeRange {
    pub start_ns: i64,
    pub end_ns: i64,
}

/// Aligned intervals whose values differ between two versions. Release with
/// `gp_free_time_ranges`.
///
/// # Safety
/// Output pointers must be writable; `key` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gp_store_changed_ranges(
    store: *const GpStore,
    key: *const c_char,
    version_a: u64,
    version_b: u64,
    pointwidth: u8,
    out_ranges: *mut *mut GpTimeRange,
    out_len: *mut usize,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let key = match parse_key(key) {
        Ok(k) => k,
        Err(s) => return s,
    };
    if out_ranges.is_null() || out_len.is_null() {
        set_error("output pointers are null");
        return GpStatus::InvalidArgument;
    }
    match store.changed_ranges(&key, VersionId(version_a), VersionId(version_b), pointwidth) {
        Ok(ranges) => {
            let out: Vec<GpTimeRange> = ranges
                .iter()
                .map(|r| GpTimeRange {
                    start_ns: r.start,
                    end_ns: r.end,
                })
                .collect();
            *out_len = out.len();
            let mut out = std::mem::ManuallyDrop::new(out.into_boxed_slice());
            *out_ranges = out.as_mut_ptr();
            GpStatus::Ok
        }
        Err(e) => {
            let s = status_of(&e);
            set_error(e);
            s
        }
    }
}

/// Release an array returned by `gp_store_changed_ranges`.
///
/// # Safety
/// Pass exactly the pointer and length produced by one successful call.
#[no_mangle]
pub unsafe extern "C" fn gp_free_time_ranges(ranges: *mut GpTimeRange, len: usize) {
    if !ranges.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(ranges, len)));
    }
}

// ---------------------------------------------------------------------------
// Scenario runs
// ---------------------------------------------------------------------------

/// Run a scenario file end to end against the given store handle, writing
/// reports under `out_dir`. On success `*out_manifest_json` holds the run
/// manifest as a JSON string; release it with `gp_free_string`. A negative
/// `seed` keeps the scenario's own seed.
///
/// # Safety
/// Paths must be NUL-terminated; `out_manifest_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_run_scenario(
    store: *const GpStore,
    scenario_path: *const c_char,
    out_dir: *const c_char,
    seed: i64,
    out_manifest_json: *mut *mut c_char,
) -> GpStatus {
    let store = match store_ref(store) {
        Ok(s) => s,
        Err(s) => return s,
    };
    let path = match cstr(scenario_path, "scenario path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let out_dir = match cstr(out_dir, "output dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    if out_manifest_json.is_null() {
        set_error("manifest output pointer is null");
        return GpStatus::InvalidArgument;
    }
    let (scenario, hash) = match Scenario::from_path(Path::new(path)) {
        Ok(x) => x,
        Err(e) => {
            set_error(&e);
            return match e {
                gridphasor_core::scenario::ScenarioError::Io(_) => GpStatus::Io,
                _ => GpStatus::InvalidArgument,
            };
        }
    };
    match run_scenario(
        &scenario,
        &hash,
        store,
        None,
        Path::new(out_dir),
        (seed >= 0).then_some(seed as u64),
    ) {
        Ok(manifest) => {
            let json = serde_json_string(&manifest);
            match CString::new(json) {
                Ok(c) => {
                    *out_manifest_json = c.into_raw();
                    GpStatus::Ok
                }
                Err(_) => {
                    set_error("manifest contained an interior NUL");
                    GpStatus::Runtime
                }
            }
        }
        Err(e) => {
            set_error(&e);
            GpStatus::Runtime
        }
    }
}

fn serde_json_string(manifest: &gridphasor_core::scenario::RunManifest) -> String {
    // RunManifest is serde-serializable through core's exports.
    gridphasor_core::scenario::manifest_to_json(manifest)
}

/// Release a string returned by this library.
///
/// # Safety
/// Pass exactly a pointer produced by this library, once.
#[no_mangle]
pub unsafe extern "C" fn gp_free_string(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
