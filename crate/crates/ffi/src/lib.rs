//! C ABI over the reranker: load a checkpoint and an encoding cache, read
//! cached encodings, score candidates and compute closed-form costs.
//!
//! Every fallible function returns a [`DrStatus`]; on failure the message is
//! kept per thread and can be read with [`dr_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use decoupled_rerank::bench::{closed_form_pairs, BenchProfile};
use decoupled_rerank::cache::{CacheKey, EncodingCache};
use decoupled_rerank::classifier::probability;
use decoupled_rerank::config::Architecture;
use decoupled_rerank::encoder::{tokenize, Role};
use decoupled_rerank::model::Checkpoint;
use decoupled_rerank::rerank::RerankMode;
use decoupled_rerank::tensor::OpCounters;
use decoupled_rerank::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    CacheMiss = 5,
    Consistency = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

/// Scoring mode for closed-form cost queries.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrMode {
    Cached = 0,
    Fresh = 1,
    Concat = 2,
}

/// Model shape used by [`dr_closed_form_pairs`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DrShape {
    pub heads: u32,
    pub n_lower: u32,
    pub k_layers: u32,
    pub max_question_len: u32,
    pub max_document_len: u32,
}

/// A loaded checkpoint.
pub struct DrModel {
    checkpoint: Checkpoint,
}

/// A loaded document-encoding cache.
pub struct DrCache {
    cache: EncodingCache,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DrStatus {
    match e {
        Error::Io(_) => DrStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) | Error::Schema { .. } | Error::MissingField(_) => {
            DrStatus::Format
        }
        Error::CacheMiss { .. } => DrStatus::CacheMiss,
        Error::Consistency(_) | Error::Provenance { .. } => DrStatus::Consistency,
        Error::Dimension { .. } | Error::InvalidInput(_) | Error::DuplicateKey(_) | Error::Coverage(_) => {
            DrStatus::InvalidArgument
        }
        Error::Stage { source, .. } => status_of(source),
        _ => DrStatus::Internal,
    }
}

struct Failure(DrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: DrStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records any failure and converts panics into [`DrStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            DrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside the library");
            DrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(DrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(DrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(DrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn str_array<'a>(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(DrStatus::NullPointer, format!("{what} is null")));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .enumerate()
        .map(|(i, &s)| str_arg(s, &format!("{what}[{i}]")))
        .collect()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns the full message length
/// including the terminator. `buf` may be null when `len` is 0.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dr_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_model_load(path: *const c_char, out: *mut *mut DrModel) -> DrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let checkpoint = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(DrModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`dr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dr_model_free(model: *mut DrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Digest of all parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_model_hash(model: *const DrModel, out: *mut u64) -> DrStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.checkpoint.model_hash();
        Ok(())
    })
}

/// Digest of the document encoder; cache entries are keyed by it.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_model_document_hash(model: *const DrModel, out: *mut u64) -> DrStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.checkpoint.params.document_hash();
        Ok(())
    })
}

/// Shape of the model's encoders.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_model_shape(model: *const DrModel, out: *mut DrShape) -> DrStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.checkpoint.config.model;
        *out_arg(out, "out")? = DrShape {
            heads: m.heads as u32,
            n_lower: m.n_lower as u32,
            k_layers: m.k_layers as u32,
            max_question_len: m.max_question_len as u32,
            max_document_len: m.max_document_len as u32,
        };
        Ok(())
    })
}

/// Loads an encoding cache file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_cache_load(path: *const c_char, out: *mut *mut DrCache) -> DrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cache = EncodingCache::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(DrCache { cache }));
        Ok(())
    })
}

/// Releases a cache; null is ignored.
///
/// # Safety
/// `cache` must come from [`dr_cache_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dr_cache_free(cache: *mut DrCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Number of cached documents.
///
/// # Safety
/// `cache` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dr_cache_len(cache: *const DrCache, out: *mut usize) -> DrStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(cache, "cache")?.cache.len();
        Ok(())
    })
}

/// Copies the `rows × width` encoding of `doc_id` under `model_hash` into
/// `buf` (row-major) and its unpadded length into `true_length`. A key
/// absent under that hash is [`DrStatus::CacheMiss`]; a buffer shorter than
/// `rows × width` floats is [`DrStatus::BufferTooSmall`].
///
/// # Safety
/// `cache` must be a live handle, `doc_id` NUL-terminated, `buf` valid for
/// `buf_len` floats and `rows`, `width`, `true_length` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dr_cache_get(
    cache: *const DrCache,
    doc_id: *const c_char,
    model_hash: u64,
    buf: *mut f32,
    buf_len: usize,
    rows: *mut usize,
    width: *mut usize,
    true_length: *mut usize,
) -> DrStatus {
    guard(|| {
        let cache = &ref_arg(cache, "cache")?.cache;
        let enc = cache.get(&CacheKey::new(str_arg(doc_id, "doc_id")?, model_hash))?;
        *out_arg(rows, "rows")? = enc.rows();
        *out_arg(width, "width")? = enc.width();
        *out_arg(true_length, "true_length")? = enc.true_length;
        let data = enc.values.data();
        if buf_len < data.len() {
            return Err(fail(
                DrStatus::BufferTooSmall,
                format!("buffer holds {buf_len} floats, encoding needs {}", data.len()),
            ));
        }
        if buf.is_null() {
            return Err(fail(DrStatus::NullPointer, "buf is null"));
        }
        std::ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

fn decoupled_arch(c: &Checkpoint) -> Result<Architecture, Failure> {
    match c.config.model.arch {
        Architecture::Concat => Err(fail(
            DrStatus::InvalidArgument,
            "the concatenated model has no document encodings to cache",
        )),
        a => Ok(a),
    }
}

/// Relevance probabilities of `n_docs` cached documents for `question`,
/// written to `out_probs` in input order. Every missing key is reported in
/// one [`DrStatus::CacheMiss`] before anything is scored.
///
/// # Safety
/// `model` and `cache` must be live handles, `question` and each of the
/// `n_docs` entries of `doc_ids` NUL-terminated, and `out_probs` valid for
/// `n_docs` floats.
#[no_mangle]
pub unsafe extern "C" fn dr_score_cached(
    model: *const DrModel,
    cache: *const DrCache,
    question: *const c_char,
    doc_ids: *const *const c_char,
    n_docs: usize,
    out_probs: *mut f32,
) -> DrStatus {
    guard(|| {
        let ckpt = &ref_arg(model, "model")?.checkpoint;
        let cache = &ref_arg(cache, "cache")?.cache;
        let arch = decoupled_arch(ckpt)?;
        let ids = str_array(doc_ids, n_docs, "doc_ids")?;
        if n_docs > 0 && out_probs.is_null() {
            return Err(fail(DrStatus::NullPointer, "out_probs is null"));
        }
        let params = &ckpt.params;
        let hash = params.document_hash();
        let missing: Vec<CacheKey> = ids
            .iter()
            .map(|id| CacheKey::new(*id, hash))
            .filter(|k| !cache.contains(k))
            .collect();
        if !missing.is_empty() {
            return Err(Error::CacheMiss { keys: missing }.into());
        }
        let m = &ckpt.config.model;
        let q = tokenize(str_arg(question, "question")?, Role::Question, &ckpt.vocab, m.max_question_len)?;
        let mut counters = OpCounters::default();
        let q_enc = params.question_encoder.encode(&q, &mut counters)?;
        for (i, id) in ids.iter().enumerate() {
            let d_enc = cache.get(&CacheKey::new(*id, hash))?;
            let logit = params.decoupled_logit(arch, &q_enc, &d_enc, &mut counters)?;
            *out_probs.add(i) = probability(logit);
        }
        Ok(())
    })
}

/// Relevance probabilities of `n_docs` document texts for `question`,
/// encoding each document on the fly (any architecture).
///
/// # Safety
/// `model` must be a live handle, `question` and each of the `n_docs`
/// entries of `doc_texts` NUL-terminated, and `out_probs` valid for
/// `n_docs` floats.
#[no_mangle]
pub unsafe extern "C" fn dr_score_texts(
    model: *const DrModel,
    question: *const c_char,
    doc_texts: *const *const c_char,
    n_docs: usize,
    out_probs: *mut f32,
) -> DrStatus {
    guard(|| {
        let ckpt = &ref_arg(model, "model")?.checkpoint;
        let texts = str_array(doc_texts, n_docs, "doc_texts")?;
        if n_docs > 0 && out_probs.is_null() {
            return Err(fail(DrStatus::NullPointer, "out_probs is null"));
        }
        let m = &ckpt.config.model;
        let params = &ckpt.params;
        let q = tokenize(str_arg(question, "question")?, Role::Question, &ckpt.vocab, m.max_question_len)?;
        let mut counters = OpCounters::default();
        let q_enc = match m.arch {
            Architecture::Concat => None,
            _ => Some(params.question_encoder.encode(&q, &mut counters)?),
        };
        for (i, text) in texts.iter().enumerate() {
            let d = tokenize(text, Role::Document, &ckpt.vocab, m.max_document_len)?;
            let logit = match &q_enc {
                None => params.concat_logit(&q, &d, &mut counters)?,
                Some(q_enc) => {
                    let d_enc = params.document_encoder.encode(&d, &mut counters)?;
                    params.decoupled_logit(m.arch, q_enc, &d_enc, &mut counters)?
                }
            };
            *out_probs.add(i) = probability(logit);
        }
        Ok(())
    })
}

/// Attention pairs needed to score `n_docs` full-length candidates for one
/// question in `mode`.
///
/// # Safety
/// `shape` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dr_closed_form_pairs(
    shape: *const DrShape,
    mode: DrMode,
    n_docs: u64,
    out: *mut u64,
) -> DrStatus {
    guard(|| {
        let s = ref_arg(shape, "shape")?;
        let profile = BenchProfile {
            heads: s.heads as usize,
            n_lower: s.n_lower as usize,
            k_layers: s.k_layers as usize,
            lq: s.max_question_len as usize,
            ld: s.max_document_len as usize,
            ..BenchProfile::default()
        };
        let mode = match mode {
            DrMode::Cached => RerankMode::Cached,
            DrMode::Fresh => RerankMode::Fresh,
            DrMode::Concat => RerankMode::Concat,
        };
        *out_arg(out, "out")? = closed_form_pairs(&profile, mode, n_docs as usize);
        Ok(())
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
