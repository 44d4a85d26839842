//! C ABI over the annoselect core.
//!
//! Objects are opaque handles created by `anno_*_open`/`anno_*_create` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`AnnoStatus`]; on failure [`anno_last_error`] describes the problem for
//! the calling thread. Strings returned by the library are released with
//! [`anno_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use annoselect::dataset::Dataset;
use annoselect::labels::hellinger_raw;
use annoselect::sampling::{cosine_distance, sample_faft, sample_random, DistanceMetric, Method};
use annoselect::session::{create_session, AnnotationSession, AnnotatorGroup, LabelValue, SessionConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dataset = 3,
    Sampling = 4,
    Session = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 99,
}

/// Distance used by FAFT.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnoMetric {
    Cosine = 0,
    Euclidean = 1,
}

/// Sample-selection strategy of a session.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnoMethod {
    Random = 0,
    Faft = 1,
    TwoDv = 2,
}

/// Opaque ingested dataset.
pub struct AnnoDataset(Dataset);

/// Opaque annotation session.
pub struct AnnoSession(AnnotationSession);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(AnnoStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(AnnoStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl Into<String>) -> Self {
        Failure(AnnoStatus::InvalidArgument, msg.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AnnoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AnnoStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            AnnoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn write_order(order: &[usize], out: *mut usize, out_len: usize) -> Result<(), Failure> {
    if out_len < order.len() {
        return Err(Failure(
            AnnoStatus::BufferTooSmall,
            format!("buffer holds {out_len} entries, need {}", order.len()),
        ));
    }
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    // SAFETY: the caller guarantees `out` points to `out_len` writable entries.
    unsafe { std::ptr::copy_nonoverlapping(order.as_ptr(), out, order.len()) };
    Ok(())
}

fn metric(m: AnnoMetric) -> DistanceMetric {
    match m {
        AnnoMetric::Cosine => DistanceMetric::Cosine,
        AnnoMetric::Euclidean => DistanceMetric::Euclidean,
    }
}

/// Message of the last failed call on this thread, or NULL. Release with
/// [`anno_string_free`].
#[no_mangle]
pub extern "C" fn anno_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Ingests a dataset directory or manifest file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn anno_dataset_open(path: *const c_char, out: *mut *mut AnnoDataset) -> AnnoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let ds = annoselect::ingest_dataset(Path::new(path)).map_err(|e| Failure(AnnoStatus::Dataset, e.to_string()))?;
        *out = Box::into_raw(Box::new(AnnoDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`anno_dataset_open`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_dataset_free(ds: *mut AnnoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `ds` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_dataset_n_samples(ds: *const AnnoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Feature dimensionality, or 0 for NULL.
///
/// # Safety
/// `ds` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_dataset_n_dims(ds: *const AnnoDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.features.n_dims())
}

/// Writes `budget` distinct indices from `0..n_total` to `out`.
///
/// # Safety
/// `out` must point to `out_len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn anno_sample_random(
    n_total: usize,
    budget: usize,
    seed: u64,
    out: *mut usize,
    out_len: usize,
) -> AnnoStatus {
    guard(|| {
        let order = sample_random(n_total, budget, seed).map_err(|e| Failure(AnnoStatus::Sampling, e.to_string()))?;
        write_order(&order.order, out, out_len)
    })
}

/// Writes the first `budget` FAFT picks over the dataset's features to `out`.
///
/// # Safety
/// `ds` must be a live handle and `out` must point to `out_len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn anno_sample_faft(
    ds: *const AnnoDataset,
    budget: usize,
    seed: u64,
    metric_kind: AnnoMetric,
    out: *mut usize,
    out_len: usize,
) -> AnnoStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| Failure::null("ds"))?;
        let order = sample_faft(&ds.0.features, budget, seed, metric(metric_kind))
            .map_err(|e| Failure(AnnoStatus::Sampling, e.to_string()))?;
        write_order(&order.order, out, out_len)
    })
}

/// Cosine distance of two vectors of length `len`.
///
/// # Safety
/// `u` and `v` must point to `len` readable values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn anno_cosine_distance(u: *const f64, v: *const f64, len: usize, out: *mut f64) -> AnnoStatus {
    guard(|| {
        let (u, v) = (slice_arg(u, len, "u")?, slice_arg(v, len, "v")?);
        let out = out_arg(out, "out")?;
        *out = cosine_distance(u, v).map_err(|e| Failure::arg(e.to_string()))?;
        Ok(())
    })
}

/// Hellinger distance of two discrete distributions of length `len`.
///
/// # Safety
/// `p` and `q` must point to `len` readable values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn anno_hellinger(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> AnnoStatus {
    guard(|| {
        let (p, q) = (slice_arg(p, len, "p")?, slice_arg(q, len, "q")?);
        if len == 0 {
            return Err(Failure::arg("distributions are empty"));
        }
        if p.iter().chain(q).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Failure::arg("proportions must be finite and non-negative"));
        }
        *out_arg(out, "out")? = hellinger_raw(p, q);
        Ok(())
    })
}

/// Starts a session on one track. The dataset may be freed afterwards.
///
/// # Safety
/// `ds` must be a live handle, strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn anno_session_create(
    ds: *const AnnoDataset,
    track: *const c_char,
    method: AnnoMethod,
    budget: usize,
    seed: u64,
    annotator_id: *const c_char,
    expert: bool,
    out: *mut *mut AnnoSession,
) -> AnnoStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| Failure::null("ds"))?;
        let cfg = SessionConfig {
            dataset_name: ds.0.name.clone(),
            track: str_arg(track, "track")?.to_string(),
            method: match method {
                AnnoMethod::Random => Method::Random,
                AnnoMethod::Faft => Method::Faft,
                AnnoMethod::TwoDv => Method::TwoDv,
            },
            budget,
            seed,
            annotator_id: str_arg(annotator_id, "annotator_id")?.to_string(),
            annotator_group: if expert { AnnotatorGroup::Expert } else { AnnotatorGroup::NonExpert },
            metric: DistanceMetric::Cosine,
        };
        let out = out_arg(out, "out")?;
        let s = create_session(&ds.0, cfg).map_err(|e| Failure(AnnoStatus::Session, e.to_string()))?;
        *out = Box::into_raw(Box::new(AnnoSession(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_session_free(s: *mut AnnoSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Global index of the sample to annotate next; `*has_current` is false when
/// there is none.
///
/// # Safety
/// `s` must be a live handle; `out` and `has_current` valid.
#[no_mangle]
pub unsafe extern "C" fn anno_session_current(s: *const AnnoSession, out: *mut usize, has_current: *mut bool) -> AnnoStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| Failure::null("session"))?;
        let cur = s.0.current();
        *out_arg(has_current, "has_current")? = cur.is_some();
        *out_arg(out, "out")? = cur.unwrap_or(0);
        Ok(())
    })
}

/// Labels a sample by global index. A NULL `class_id` marks it erroneous.
/// `labeled_count`, when not NULL, receives the count afterwards.
///
/// # Safety
/// `s` must be a live handle; `class_id` NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn anno_session_assign(
    s: *mut AnnoSession,
    sample_index: usize,
    class_id: *const c_char,
    labeled_count: *mut usize,
) -> AnnoStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| Failure::null("session"))?;
        let value = if class_id.is_null() {
            LabelValue::Erroneous
        } else {
            LabelValue::Class(str_arg(class_id, "class_id")?.to_string())
        };
        let n = s
            .0
            .assign_label(sample_index, value)
            .map_err(|e| Failure(AnnoStatus::Session, e.to_string()))?;
        if let Some(c) = labeled_count.as_mut() {
            *c = n;
        }
        Ok(())
    })
}

/// Number of labeled samples, or 0 for NULL.
///
/// # Safety
/// `s` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn anno_session_labeled_count(s: *const AnnoSession) -> usize {
    s.as_ref().map_or(0, |s| s.0.labeled_count())
}

/// Exports the labels as CSV into a new string. Release with [`anno_string_free`].
///
/// # Safety
/// `s` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn anno_session_export_csv(s: *const AnnoSession, out: *mut *mut c_char) -> AnnoStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| Failure::null("session"))?;
        let out = out_arg(out, "out")?;
        let csv = CString::new(s.0.export_csv()).map_err(|_| Failure::arg("export contains NUL"))?;
        *out = csv.into_raw();
        Ok(())
    })
}

/// Writes a snapshot file.
///
/// # Safety
/// `s` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn anno_session_save(s: *const AnnoSession, path: *const c_char) -> AnnoStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| Failure::null("session"))?;
        let path = str_arg(path, "path")?;
        std::fs::write(path, s.0.save()).map_err(|e| Failure(AnnoStatus::Io, format!("{path}: {e}")))
    })
}

/// Restores a session from a snapshot file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn anno_session_load(path: *const c_char, out: *mut *mut AnnoSession) -> AnnoStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(AnnoStatus::Io, format!("{path}: {e}")))?;
        let s = AnnotationSession::load(&bytes).map_err(|e| Failure(AnnoStatus::Session, e.to_string()))?;
        *out = Box::into_raw(Box::new(AnnoSession(s)));
        Ok(())
    })
}
