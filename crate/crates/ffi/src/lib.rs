//! C ABI over the detector, embedding files and the EER metric.
//!
//! Every function returns an [`NsStatus`]; on failure a message is kept per
//! thread and can be read with [`ns_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nonsem::detector::{load_checkpoint, DetectorModel};
use nonsem::features::{read_embedding_file, synthetic_frontend, EmbeddingMatrix};
use nonsem::metrics::compute_eer;
use nonsem::nn::Tensor;
use nonsem::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numeric = 6,
    UndefinedMetric = 7,
    Panic = 8,
}

/// Trained detector loaded from a checkpoint.
pub struct NsDetector {
    model: DetectorModel<f32>,
}

/// One `d × t` embedding matrix.
pub struct NsEmbedding {
    matrix: EmbeddingMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> NsStatus {
    match e {
        Error::Io { .. } => NsStatus::Io,
        Error::Format { .. } | Error::Parse { .. } => NsStatus::Format,
        Error::Config(_) | Error::Usage(_) | Error::Validation(_) => NsStatus::Config,
        Error::Numeric(_) | Error::DegenerateBatch(_) | Error::DegenerateSequence(_) => NsStatus::Numeric,
        Error::UndefinedMetric(_) => NsStatus::UndefinedMetric,
        Error::Load { source, .. } => status_of(source),
        _ => NsStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (NsStatus, String)>) -> NsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (NsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NsStatus, String) {
    (NsStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (NsStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (NsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn ns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `CKPT` checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_detector_load(path: *const c_char, out: *mut *mut NsDetector) -> NsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path)? };
        let ckpt = load_checkpoint(path).map_err(lib_err)?;
        let handle = Box::new(NsDetector { model: ckpt.model });
        // SAFETY: `out` is non-null and writable per the contract.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `detector` must be null or a handle from [`ns_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_detector_free(detector: *mut NsDetector) {
    if !detector.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(detector) });
    }
}

/// Embedding dimension the detector expects.
///
/// # Safety
/// `detector` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_detector_input_dim(detector: *const NsDetector, out: *mut usize) -> NsStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let det = unsafe { detector.as_ref() }.ok_or_else(|| null("detector"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: writable per the contract.
        unsafe { *out = det.model.config().input_dim };
        Ok(())
    })
}

/// Scores `n` utterances laid out as `[n][d][t]` floats (embedding
/// dimension major, then time). Writes `n` scores; higher is more bonafide.
///
/// # Safety
/// `data` must hold `n * d * t` floats and `scores` room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_detector_score(
    detector: *const NsDetector,
    data: *const f32,
    n: usize,
    d: usize,
    t: usize,
    scores: *mut f64,
) -> NsStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let det = unsafe { detector.as_ref() }.ok_or_else(|| null("detector"))?;
        if data.is_null() || scores.is_null() {
            return Err(null("data or scores"));
        }
        let want = det.model.config().input_dim;
        if d != want {
            return Err((NsStatus::Config, format!("detector expects d = {want}, got {d}")));
        }
        let len = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(t))
            .filter(|&x| x > 0)
            .ok_or_else(|| (NsStatus::InvalidArgument, format!("bad shape {n} x {d} x {t}")))?;
        // SAFETY: `data` holds `len` floats per the contract.
        let input = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let tensor = Tensor::new([n, d, t], input).map_err(lib_err)?;
        let out = det.model.score_batch(tensor).map_err(lib_err)?;
        // SAFETY: `scores` has room for `n` values per the contract.
        unsafe { std::slice::from_raw_parts_mut(scores, n) }.copy_from_slice(&out);
        Ok(())
    })
}

/// Scores one embedding matrix.
///
/// # Safety
/// Both handles must be live; `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_detector_score_embedding(
    detector: *const NsDetector,
    embedding: *const NsEmbedding,
    score: *mut f64,
) -> NsStatus {
    guard(|| {
        // SAFETY: live handles per the contract.
        let det = unsafe { detector.as_ref() }.ok_or_else(|| null("detector"))?;
        let emb = unsafe { embedding.as_ref() }.ok_or_else(|| null("embedding"))?;
        if score.is_null() {
            return Err(null("score"));
        }
        let m = &emb.matrix;
        let want = det.model.config().input_dim;
        if m.dim() != want {
            return Err((NsStatus::Config, format!("detector expects d = {want}, embedding has {}", m.dim())));
        }
        let x = m.to_tensor().reshape([1, m.dim(), m.frames()]).map_err(lib_err)?;
        let s = det.model.score_batch(x).map_err(lib_err)?;
        // SAFETY: writable per the contract.
        unsafe { *score = s[0] };
        Ok(())
    })
}

/// Reads an `EMB1` file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_embedding_read(path: *const c_char, out: *mut *mut NsEmbedding) -> NsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path)? };
        let matrix = read_embedding_file(path).map_err(lib_err)?;
        // SAFETY: writable per the contract.
        unsafe { *out = Box::into_raw(Box::new(NsEmbedding { matrix })) };
        Ok(())
    })
}

/// # Safety
/// `embedding` must be a live handle; `d` and `t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_embedding_shape(embedding: *const NsEmbedding, d: *mut usize, t: *mut usize) -> NsStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let emb = unsafe { embedding.as_ref() }.ok_or_else(|| null("embedding"))?;
        if d.is_null() || t.is_null() {
            return Err(null("d or t"));
        }
        // SAFETY: writable per the contract.
        unsafe {
            *d = emb.matrix.dim();
            *t = emb.matrix.frames();
        }
        Ok(())
    })
}

/// # Safety
/// `embedding` must be null or a handle from [`ns_embedding_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ns_embedding_free(embedding: *mut NsEmbedding) {
    if !embedding.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(embedding) });
    }
}

/// Equal error rate of bonafide vs spoof scores (higher = more bonafide).
/// `threshold` may be null.
///
/// # Safety
/// The arrays must hold `n_bonafide` and `n_spoof` doubles; `eer` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ns_compute_eer(
    bonafide: *const f64,
    n_bonafide: usize,
    spoof: *const f64,
    n_spoof: usize,
    eer: *mut f64,
    threshold: *mut f64,
) -> NsStatus {
    guard(|| {
        if eer.is_null() {
            return Err(null("eer"));
        }
        let slice = |p: *const f64, n: usize, what: &str| {
            if n == 0 {
                Ok(&[][..])
            } else if p.is_null() {
                Err(null(what))
            } else {
                // SAFETY: `p` holds `n` doubles per the contract.
                Ok(unsafe { std::slice::from_raw_parts(p, n) })
            }
        };
        let r = compute_eer(slice(bonafide, n_bonafide, "bonafide")?, slice(spoof, n_spoof, "spoof")?).map_err(lib_err)?;
        // SAFETY: writable per the contract; `threshold` checked for null.
        unsafe {
            *eer = r.eer;
            if !threshold.is_null() {
                *threshold = r.threshold;
            }
        }
        Ok(())
    })
}

/// Synthetic frontend embedding of one chunk: `d` unit-norm floats.
///
/// # Safety
/// `chunk` must hold `len` floats and `out` room for `d` floats.
#[no_mangle]
pub unsafe extern "C" fn ns_synthetic_frontend(chunk: *const f32, len: usize, seed: u64, d: usize, out: *mut f32) -> NsStatus {
    guard(|| {
        if chunk.is_null() || out.is_null() {
            return Err(null("chunk or out"));
        }
        // SAFETY: sizes per the contract.
        let input = unsafe { std::slice::from_raw_parts(chunk, len) };
        let v = synthetic_frontend(input, seed, d).map_err(lib_err)?;
        unsafe { std::slice::from_raw_parts_mut(out, d) }.copy_from_slice(&v);
        Ok(())
    })
}
