//! C ABI over fusionkit.
//!
//! Every fallible call returns an `FkStatus`; on failure the message is
//! available from `fk_last_error` on the same thread. Stores are opaque
//! handles released with `fk_store_free`. Strings returned by the library
//! are released with `fk_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fusionkit::embedstore::{normalize_f32, Embedding, EmbeddingStore};
use fusionkit::error::Error;
use fusionkit::fusion::{self, FusionConfig, FusionMode, PrototypeBank};
use fusionkit::harness::{parse_kv, run_experiment, ExperimentConfig};
use fusionkit::metrics::Metric;
use fusionkit::scan::{EvalSet, Evaluator, GRID_POINTS};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkStatus {
    FkOk = 0,
    /// A required pointer argument was null.
    FkNullPointer = 1,
    /// Bad dimension, weight, vector or buffer size.
    FkInvalidArgument = 2,
    /// Invalid configuration.
    FkConfig = 3,
    /// Bad or inconsistent data (store, manifest, prompts).
    FkData = 4,
    FkBridge = 5,
    FkIo = 6,
    /// A Rust panic was caught at the boundary.
    FkPanic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkFusionMode {
    FkTextOnly = 0,
    FkImageOnly = 1,
    FkStandard = 2,
    FkConfidence = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkMetric {
    FkTop1 = 0,
    FkMeanPerClass = 1,
}

/// Number of points written by `fk_store_scan`.
pub const FK_GRID_POINTS: usize = 101;
const _: () = assert!(FK_GRID_POINTS == GRID_POINTS);

/// Opaque handle to an opened store.
pub struct FkStore {
    store: EmbeddingStore,
    bank: PrototypeBank,
    evalset: EvalSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FkStatus {
    match e {
        Error::Io { .. } => FkStatus::FkIo,
        Error::ZeroVector
        | Error::NonFinite
        | Error::EmptyList
        | Error::DimMismatch { .. }
        | Error::WeightOutOfRange(_)
        | Error::ConfidenceOutOfRange(_) => FkStatus::FkInvalidArgument,
        _ => match e.exit_code() {
            2 => FkStatus::FkConfig,
            4 => FkStatus::FkBridge,
            _ => FkStatus::FkData,
        },
    }
}

struct Fail(FkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FkStatus::FkNullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FkStatus::FkInvalidArgument, msg.into())
}

/// Runs `f`, records any error and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FkStatus::FkOk
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside fusionkit".into());
            FkStatus::FkPanic
        }
    }
}

unsafe fn floats<'a>(p: *const f32, len: usize, what: &str) -> Result<&'a [f32], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len == 0 {
        return Err(invalid(format!("{what} has zero length")));
    }
    // SAFETY: caller guarantees `p` points to `len` readable floats.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn out_doubles<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `p` points to `len` writable doubles.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees a nul-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn embedding(values: &[f32]) -> Result<Embedding, Fail> {
    Ok(Embedding::new(values.to_vec())?)
}

fn mode_of(m: FkFusionMode) -> FusionMode {
    match m {
        FkFusionMode::FkTextOnly => FusionMode::TextOnly,
        FkFusionMode::FkImageOnly => FusionMode::ImageOnly,
        FkFusionMode::FkStandard => FusionMode::Standard,
        FkFusionMode::FkConfidence => FusionMode::Confidence,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next fusionkit call on the same thread.
#[no_mangle]
pub extern "C" fn fk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opens an EMBS store (and its manifest). All class records of the store
/// form the prototypes; labeled queries form the evaluation set.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_store_open(path: *const c_char, out: *mut *mut FkStore) -> FkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { c_str(path, "path")? };
        let store = EmbeddingStore::open(Path::new(path))?;
        let bank = PrototypeBank::from_protos(&store.class_protos()?)?;
        let evalset = EvalSet::from_records(store.queries());
        let handle = Box::new(FkStore { store, bank, evalset });
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Releases a store handle. Null is ignored.
///
/// # Safety
/// `store` must come from `fk_store_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fk_store_free(store: *mut FkStore) {
    if !store.is_null() {
        drop(unsafe { Box::from_raw(store) });
    }
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fk_store_dim(store: *const FkStore) -> usize {
    unsafe { store.as_ref() }.map_or(0, |s| s.store.dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fk_store_num_classes(store: *const FkStore) -> usize {
    unsafe { store.as_ref() }.map_or(0, |s| s.store.num_classes())
}

/// Number of labeled queries, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fk_store_num_queries(store: *const FkStore) -> usize {
    unsafe { store.as_ref() }.map_or(0, |s| s.evalset.len())
}

/// Unit-normalizes `dim` floats from `input` into `out` (may alias).
///
/// # Safety
/// Both pointers must reference `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn fk_normalize(input: *const f32, dim: usize, out: *mut f32) -> FkStatus {
    guard(|| {
        let v = unsafe { floats(input, dim, "input")? }.to_vec();
        if out.is_null() {
            return Err(null("out"));
        }
        let e = normalize_f32(&v)?;
        let dst = unsafe { slice::from_raw_parts_mut(out, dim) };
        dst.copy_from_slice(e.values());
        Ok(())
    })
}

/// `out = w * t + (1 - w) * i`.
///
/// # Safety
/// `t` and `i` must reference `dim` floats, `out` `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn fk_fuse_standard(
    t: *const f32,
    i: *const f32,
    dim: usize,
    w: f64,
    out: *mut f64,
) -> FkStatus {
    guard(|| {
        let t = embedding(unsafe { floats(t, dim, "t")? })?;
        let i = embedding(unsafe { floats(i, dim, "i")? })?;
        let row = fusion::fuse_standard(&t, &i, w)?;
        unsafe { out_doubles(out, dim, "out")? }.copy_from_slice(&row);
        Ok(())
    })
}

/// `out = w * t + (1 - w) * c * i`.
///
/// # Safety
/// `t` and `i` must reference `dim` floats, `out` `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn fk_fuse_confidence(
    t: *const f32,
    i: *const f32,
    dim: usize,
    w: f64,
    c: f64,
    out: *mut f64,
) -> FkStatus {
    guard(|| {
        let t = embedding(unsafe { floats(t, dim, "t")? })?;
        let i = embedding(unsafe { floats(i, dim, "i")? })?;
        let row = fusion::fuse_confidence(&t, &i, w, c)?;
        unsafe { out_doubles(out, dim, "out")? }.copy_from_slice(&row);
        Ok(())
    })
}

/// Per-class confidence `1 - softmax(q . t)` for `n` text rows stored
/// row-major in `texts` (`n * dim` floats). Writes `n` doubles.
///
/// # Safety
/// Pointers must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn fk_confidence(
    q: *const f32,
    texts: *const f32,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> FkStatus {
    guard(|| {
        let q = embedding(unsafe { floats(q, dim, "q")? })?;
        let total = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let flat = unsafe { floats(texts, total, "texts")? };
        let rows = flat
            .chunks(dim)
            .map(embedding)
            .collect::<Result<Vec<_>, _>>()?;
        let c = fusion::confidence(&q, &rows)?;
        unsafe { out_doubles(out, n, "out")? }.copy_from_slice(&c.values);
        Ok(())
    })
}

/// Classifies one query against the store's prototypes. `scores` may be
/// null; otherwise it receives `fk_store_num_classes` doubles.
///
/// # Safety
/// `query` must reference `dim` floats; `predicted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_store_classify(
    store: *const FkStore,
    query: *const f32,
    dim: usize,
    mode: FkFusionMode,
    w: f64,
    predicted: *mut usize,
    scores: *mut f64,
) -> FkStatus {
    guard(|| {
        let s = unsafe { store.as_ref() }.ok_or_else(|| null("store"))?;
        if predicted.is_null() {
            return Err(null("predicted"));
        }
        let q = embedding(unsafe { floats(query, dim, "query")? })?;
        let cfg = FusionConfig::new(mode_of(mode), w)?;
        let sv = s.bank.score_query(&q, &cfg)?;
        unsafe { *predicted = sv.predicted };
        if !scores.is_null() {
            unsafe { out_doubles(scores, sv.scores.len(), "scores")? }.copy_from_slice(&sv.scores);
        }
        Ok(())
    })
}

/// Scans the text weight over the 101-point grid on the store's queries.
/// `curve` receives `FK_GRID_POINTS` doubles; `best_w` the smallest best weight.
///
/// # Safety
/// `curve` must hold `FK_GRID_POINTS` doubles; `best_w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_store_scan(
    store: *const FkStore,
    mode: FkFusionMode,
    metric: FkMetric,
    curve: *mut f64,
    best_w: *mut f64,
) -> FkStatus {
    guard(|| {
        let s = unsafe { store.as_ref() }.ok_or_else(|| null("store"))?;
        if best_w.is_null() {
            return Err(null("best_w"));
        }
        let metric = match metric {
            FkMetric::FkTop1 => Metric::Top1,
            FkMetric::FkMeanPerClass => Metric::MeanPerClass,
        };
        let mode = mode_of(mode);
        let result = Evaluator::new(&s.evalset, &s.bank, mode)?.scan(mode, metric)?;
        unsafe { out_doubles(curve, GRID_POINTS, "curve")? }.copy_from_slice(&result.accuracy_at);
        unsafe { *best_w = result.best_w };
        Ok(())
    })
}

/// Runs an experiment from `key = value` config text and returns the JSON
/// report in `*report_json` (free with `fk_string_free`).
///
/// # Safety
/// `config_text` must be nul-terminated; `report_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_run_experiment(
    config_text: *const c_char,
    report_json: *mut *mut c_char,
) -> FkStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let text = unsafe { c_str(config_text, "config_text")? };
        let cfg = ExperimentConfig::from_kv(&parse_kv(text)?)?;
        let report = run_experiment(&cfg)?;
        let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        let c = CString::new(json).map_err(|_| invalid("report contains a nul byte"))?;
        unsafe { *report_json = c.into_raw() };
        Ok(())
    })
}

/// Releases a string returned by fusionkit. Null is ignored.
///
/// # Safety
/// `s` must come from fusionkit and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
