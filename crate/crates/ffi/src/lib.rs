//! C ABI over the `pafs` engine: load a trained checkpoint, embed
//! spectrograms, classify queries against a labeled support set, and read
//! prepared spectrogram caches.
//!
//! Every function returns a [`PafsStatus`]; on failure a description is
//! kept per thread and can be read with [`pafs_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::{Array3, ArrayView3};
use pafs::audio::SpectrogramCache;
use pafs::config::RunConfig;
use pafs::nn::{load_checkpoint, Model};
use pafs::train::{predict_episode, EpisodeBatch};
use pafs::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PafsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Corruption = 5,
    Config = 6,
    Contract = 7,
    EmptyInput = 8,
    NonFinite = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A trained model loaded from a checkpoint.
pub struct PafsModel {
    model: Model<f32>,
    squared: bool,
}

/// A prepared spectrogram cache held in memory.
pub struct PafsCache {
    cache: SpectrogramCache,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> PafsStatus {
    match err {
        Error::Io { .. } => PafsStatus::Io,
        Error::Format(_) => PafsStatus::Format,
        Error::Corruption(_) => PafsStatus::Corruption,
        Error::Config { .. } | Error::Manifest(_) => PafsStatus::Config,
        Error::Contract(_) | Error::Sampling(_) => PafsStatus::Contract,
        Error::EmptyInput(_) => PafsStatus::EmptyInput,
        Error::NonFinite(_) => PafsStatus::NonFinite,
    }
}

/// Runs `f`, recording its error (or panic) for `pafs_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (PafsStatus, String)>) -> PafsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PafsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PafsStatus::Panic
        }
    }
}

fn lib(err: Error) -> (PafsStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (PafsStatus, String) {
    (PafsStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, (PafsStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| {
            (
                PafsStatus::InvalidArgument,
                "path is not valid UTF-8".into(),
            )
        })
}

unsafe fn slice<'a, T>(
    ptr: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (PafsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(
    ptr: *mut T,
    len: usize,
    what: &str,
) -> Result<&'a mut [T], (PafsStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pafs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`) and returns the full message length, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pafs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Loads a checkpoint written by `pafs train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pafs_model_load(
    path: *const c_char,
    out: *mut *mut PafsModel,
) -> PafsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        let ckpt = load_checkpoint(&path).map_err(lib)?;
        let cfg = RunConfig::from_text(&ckpt.config_text).map_err(lib)?;
        let model = ckpt.to_model(cfg.model.clone()).map_err(lib)?;
        *out = Box::into_raw(Box::new(PafsModel {
            model,
            squared: cfg.train.loss.fs.squared,
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from `pafs_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pafs_model_free(model: *mut PafsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Spectrogram shape the model expects and the length of one embedding.
///
/// # Safety
/// `model` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pafs_model_shape(
    model: *const PafsModel,
    n_mels: *mut usize,
    n_frames: *mut usize,
    embedding_dim: *mut usize,
) -> PafsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n_mels.is_null() || n_frames.is_null() || embedding_dim.is_null() {
            return Err(null("output"));
        }
        let (f, t) = m.model.input_shape();
        *n_mels = f;
        *n_frames = t;
        *embedding_dim = m.model.config().fused_dim();
        Ok(())
    })
}

fn views<'a>(
    m: &PafsModel,
    data: &'a [f32],
    count: usize,
) -> Result<ArrayView3<'a, f32>, (PafsStatus, String)> {
    let (f, t) = m.model.input_shape();
    ArrayView3::from_shape((count, f, t), data).map_err(|_| {
        (
            PafsStatus::InvalidArgument,
            format!("expected {count} spectrograms of {f}x{t} values"),
        )
    })
}

/// Embeds `count` standardized spectrograms (row-major, `n_mels * n_frames`
/// values each) into `out` (`count * embedding_dim` values). Inference
/// uses the original spectrogram for all four views.
///
/// # Safety
/// `spectrograms` must hold `count * n_mels * n_frames` floats and `out`
/// `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn pafs_model_embed(
    model: *const PafsModel,
    spectrograms: *const f32,
    count: usize,
    out: *mut f32,
    out_len: usize,
) -> PafsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (f, t) = m.model.input_shape();
        let dim = m.model.config().fused_dim();
        if count == 0 {
            return Err((PafsStatus::EmptyInput, "no spectrograms".into()));
        }
        if out_len < count * dim {
            return Err((
                PafsStatus::BufferTooSmall,
                format!("need {} output floats", count * dim),
            ));
        }
        let data = slice(spectrograms, count * f * t, "spectrograms")?;
        let emb = m.model.embed(views(m, data, count)?, true).map_err(lib)?;
        let out = slice_mut(out, out_len, "out")?;
        for (dst, src) in out.iter_mut().zip(emb.iter()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Nearest-prototype classification of `n_query` spectrograms against a
/// support set whose labels lie in `0..n_way` (every label present).
/// Writes one predicted label per query.
///
/// # Safety
/// Buffers must hold the stated number of spectrograms / labels.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pafs_model_classify(
    model: *const PafsModel,
    support: *const f32,
    support_labels: *const u32,
    n_support: usize,
    n_way: usize,
    query: *const f32,
    n_query: usize,
    out_labels: *mut u32,
) -> PafsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (f, t) = m.model.input_shape();
        if n_support == 0 || n_query == 0 || n_way == 0 {
            return Err((
                PafsStatus::EmptyInput,
                "support, query and n_way must be non-empty".into(),
            ));
        }
        let labels: Vec<usize> = slice(support_labels, n_support, "support_labels")?
            .iter()
            .map(|&l| l as usize)
            .collect();
        if let Some(bad) = labels.iter().find(|&&l| l >= n_way) {
            return Err((
                PafsStatus::InvalidArgument,
                format!("support label {bad} >= n_way {n_way}"),
            ));
        }
        if (0..n_way).any(|c| !labels.contains(&c)) {
            return Err((
                PafsStatus::InvalidArgument,
                "every class needs a support example".into(),
            ));
        }
        let s = views(m, slice(support, n_support * f * t, "support")?, n_support)?;
        let q = views(m, slice(query, n_query * f * t, "query")?, n_query)?;
        let mut stacked = Array3::zeros((n_support + n_query, f, t));
        stacked
            .slice_mut(ndarray::s![..n_support, .., ..])
            .assign(&s);
        stacked
            .slice_mut(ndarray::s![n_support.., .., ..])
            .assign(&q);
        let batch = EpisodeBatch {
            views: stacked,
            replicated: true,
            support_labels: labels,
            query_labels: vec![0; n_query],
            n_way,
        };
        let predicted = predict_episode(&m.model, &batch, m.squared).map_err(lib)?;
        let out = slice_mut(out_labels, n_query, "out_labels")?;
        for (dst, p) in out.iter_mut().zip(predicted) {
            *dst = p as u32;
        }
        Ok(())
    })
}

/// Opens a spectrogram cache file written by `pafs prepare`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pafs_cache_open(
    path: *const c_char,
    out: *mut *mut PafsCache,
) -> PafsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let cache = SpectrogramCache::read(&path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(PafsCache { cache }));
        Ok(())
    })
}

/// Releases a cache; null is ignored.
///
/// # Safety
/// `cache` must be null or a handle from `pafs_cache_open` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pafs_cache_free(cache: *mut PafsCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Record count and per-record shape.
///
/// # Safety
/// `cache` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pafs_cache_info(
    cache: *const PafsCache,
    count: *mut usize,
    n_mels: *mut usize,
    n_frames: *mut usize,
) -> PafsStatus {
    guard(|| {
        let c = cache.as_ref().ok_or_else(|| null("cache"))?;
        if count.is_null() || n_mels.is_null() || n_frames.is_null() {
            return Err(null("output"));
        }
        *count = c.cache.len();
        *n_mels = c.cache.n_mels();
        *n_frames = c.cache.n_frames();
        Ok(())
    })
}

/// Copies record `index` (row-major) into `out` and its class id into
/// `class_id`.
///
/// # Safety
/// `cache` must be a live handle, `out` must hold `out_len` floats and
/// `class_id` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pafs_cache_record(
    cache: *const PafsCache,
    index: usize,
    class_id: *mut u32,
    out: *mut f32,
    out_len: usize,
) -> PafsStatus {
    guard(|| {
        let c = cache.as_ref().ok_or_else(|| null("cache"))?;
        if class_id.is_null() {
            return Err(null("class_id"));
        }
        let rec = c.cache.records().get(index).ok_or_else(|| {
            (
                PafsStatus::InvalidArgument,
                format!("record {index} out of range"),
            )
        })?;
        if out_len < rec.values.len() {
            return Err((
                PafsStatus::BufferTooSmall,
                format!("need {} output floats", rec.values.len()),
            ));
        }
        let out = slice_mut(out, out_len, "out")?;
        for (dst, src) in out.iter_mut().zip(rec.values.iter()) {
            *dst = *src;
        }
        *class_id = rec.class_id;
        Ok(())
    })
}
