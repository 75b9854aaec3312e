//! C ABI over the faima pipeline.
//!
//! Every fallible function returns a [`FaimaStatus`]. On failure the
//! message is available from [`faima_last_error_message`] on the same
//! thread until the next failing call. Handles are opaque and must be
//! released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use faima::channel::Channel;
use faima::corpus::{Corpus, RelationRegistry};
use faima::heuristics::{label_pair, similarity_profile, HeuristicConfig};
use faima::mgate::{load_checkpoint, Checkpoint};
use faima::retrieval::{build_index, retrieve_exemplars, FeatureIndex, IndexMode, RetrievalPolicy};
use faima::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaimaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidData = 4,
    Corrupt = 5,
    UnsupportedVersion = 6,
    UnknownId = 7,
    Mismatch = 8,
    InvalidArgument = 9,
    BufferTooSmall = 10,
    Internal = 11,
}

/// Channel numbering used by this interface.
pub const FAIMA_CHANNEL_LIG: u32 = 0;
pub const FAIMA_CHANNEL_DOM: u32 = 1;
pub const FAIMA_CHANNEL_SEN: u32 = 2;
pub const FAIMA_CHANNEL_AVG: u32 = 3;

/// A loaded corpus with its relation registry.
pub struct FaimaCorpus {
    corpus: Corpus,
}

/// A loaded encoder checkpoint.
pub struct FaimaEncoder {
    checkpoint: Checkpoint,
}

/// A feature index over a set of sentences.
pub struct FaimaIndex {
    index: FeatureIndex,
    ids: Vec<CString>,
}

/// Heuristic similarity scores and feature bits for a sentence pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaimaProfile {
    pub lig: f64,
    pub dom: f64,
    pub sen: f64,
    pub lig_bit: bool,
    pub dom_bit: bool,
    pub sen_bit: bool,
}

/// One retrieved exemplar. `row` is the index row, see `faima_index_record_id`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaimaExemplar {
    pub row: usize,
    pub channel: u32,
    pub distance: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FaimaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => FaimaStatus::Io,
            Error::EmptyCorpus
            | Error::MalformedLine { .. }
            | Error::InvalidRecord { .. }
            | Error::DuplicateId(_)
            | Error::Json(_) => FaimaStatus::InvalidData,
            Error::Corrupt(_) => FaimaStatus::Corrupt,
            Error::UnsupportedVersion { .. } => FaimaStatus::UnsupportedVersion,
            Error::UnknownId(_) => FaimaStatus::UnknownId,
            Error::RegistryMismatch(_) | Error::DigestMismatch(_) => FaimaStatus::Mismatch,
            Error::InvalidArgument(_)
            | Error::OutOfRange(_)
            | Error::Config(_)
            | Error::Template(_)
            | Error::Shape { .. } => FaimaStatus::InvalidArgument,
            _ => FaimaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FaimaStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FaimaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FaimaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FaimaStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(FaimaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            FaimaStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(FaimaStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(FaimaStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn channel_arg(c: u32) -> Result<Channel, Failure> {
    Channel::ALL
        .get(c as usize)
        .copied()
        .ok_or_else(|| fail(FaimaStatus::InvalidArgument, format!("unknown channel {c}")))
}

fn channel_code(c: Channel) -> u32 {
    Channel::ALL.iter().position(|&x| x == c).unwrap_or(0) as u32
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn faima_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn faima_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn faima_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Loads a JSONL corpus. `registry_path` may be NULL; otherwise the corpus
/// is bound to that registry snapshot.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faima_corpus_load(
    path: *const c_char,
    registry_path: *const c_char,
    out: *mut *mut FaimaCorpus,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let corpus = if registry_path.is_null() {
            Corpus::load(Path::new(path))?
        } else {
            let reg = RelationRegistry::load(Path::new(str_arg(registry_path, "registry_path")?))?;
            Corpus::load_with_registry(Path::new(path), reg)?
        };
        *out = Box::into_raw(Box::new(FaimaCorpus { corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn faima_corpus_len(corpus: *const FaimaCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faima_corpus_free(corpus: *mut FaimaCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Heuristic similarity of two sentences of `corpus` at the default thresholds.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn faima_similarity_profile(
    corpus: *const FaimaCorpus,
    id_a: *const c_char,
    id_b: *const c_char,
    out: *mut FaimaProfile,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let c = &ref_arg(corpus, "corpus")?.corpus;
        let record = |p, what| -> Result<_, Failure> {
            let id = str_arg(p, what)?;
            c.get(id)
                .ok_or_else(|| Error::UnknownId(id.to_string()).into())
        };
        let (a, b) = (record(id_a, "id_a")?, record(id_b, "id_b")?);
        let cfg = HeuristicConfig::default();
        let p = similarity_profile(a, b, &cfg, c.registry())?;
        let bits = label_pair(&p, &cfg).0;
        *out = FaimaProfile {
            lig: p.lig,
            dom: p.dom,
            sen: p.sen,
            lig_bit: bits[0],
            dom_bit: bits[1],
            sen_bit: bits[2],
        };
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faima_checkpoint_load(
    path: *const c_char,
    out: *mut *mut FaimaEncoder,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let checkpoint = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(FaimaEncoder { checkpoint }));
        Ok(())
    })
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `encoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn faima_encoder_dim(encoder: *const FaimaEncoder) -> usize {
    encoder
        .as_ref()
        .map_or(0, |e| e.checkpoint.encoder.config.embed_dim)
}

/// # Safety
/// `encoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faima_encoder_free(encoder: *mut FaimaEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Writes the `channel` embedding of sentence `id` into `out[0..len]`;
/// `len` must equal the encoder dimension.
///
/// # Safety
/// Handles must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn faima_encode(
    encoder: *const FaimaEncoder,
    corpus: *const FaimaCorpus,
    id: *const c_char,
    channel: u32,
    out: *mut f64,
    len: usize,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let enc = &ref_arg(encoder, "encoder")?.checkpoint.encoder;
        let c = &ref_arg(corpus, "corpus")?.corpus;
        let ch = channel_arg(channel)?;
        let id = str_arg(id, "id")?;
        let rec = c.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let dim = enc.config.embed_dim;
        if len < dim {
            return Err(fail(
                FaimaStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {dim}"),
            ));
        }
        let emb = enc.encode(rec)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(emb.channel(ch));
        Ok(())
    })
}

fn wrap_index(index: FeatureIndex) -> Result<*mut FaimaIndex, Failure> {
    let ids = index
        .ids()
        .iter()
        .map(|s| CString::new(s.as_str()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| fail(FaimaStatus::InvalidData, "record id contains NUL"))?;
    Ok(Box::into_raw(Box::new(FaimaIndex { index, ids })))
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faima_index_load(
    path: *const c_char,
    out: *mut *mut FaimaIndex,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let index = FeatureIndex::load(Path::new(str_arg(path, "path")?))?;
        *out = wrap_index(index)?;
        Ok(())
    })
}

/// Builds an exact index over every sentence of `corpus`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faima_index_build(
    corpus: *const FaimaCorpus,
    encoder: *const FaimaEncoder,
    out: *mut *mut FaimaIndex,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let c = &ref_arg(corpus, "corpus")?.corpus;
        let ckpt = &ref_arg(encoder, "encoder")?.checkpoint;
        *out = wrap_index(build_index(c, ckpt, IndexMode::Exact)?)?;
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn faima_index_len(index: *const FaimaIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.len())
}

/// Record id of an index row, or NULL when out of range. Valid while the
/// index handle lives.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn faima_index_record_id(
    index: *const FaimaIndex,
    row: usize,
) -> *const c_char {
    index
        .as_ref()
        .and_then(|i| i.ids.get(row))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faima_index_free(index: *mut FaimaIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Retrieves `k` exemplars (k >= 3: one per feature channel, the rest from
/// Avg) for sentence `id` of `corpus`. Writes at most `cap` entries to `out`
/// and the count to `written`.
///
/// # Safety
/// Handles must be live; `out` must hold `cap` entries; `written` writable.
#[no_mangle]
pub unsafe extern "C" fn faima_retrieve(
    index: *const FaimaIndex,
    encoder: *const FaimaEncoder,
    corpus: *const FaimaCorpus,
    id: *const c_char,
    k: usize,
    out: *mut FaimaExemplar,
    cap: usize,
    written: *mut usize,
) -> FaimaStatus {
    guard(|| {
        out_arg(out, "out")?;
        out_arg(written, "written")?;
        let idx = ref_arg(index, "index")?;
        let ckpt = &ref_arg(encoder, "encoder")?.checkpoint;
        let c = &ref_arg(corpus, "corpus")?.corpus;
        if let Some(d) = idx.index.checkpoint_digest() {
            if d != ckpt.digest {
                return Err(Error::DigestMismatch(format!(
                    "index built from {d}, encoder is {}",
                    ckpt.digest
                ))
                .into());
            }
        }
        let id = str_arg(id, "id")?;
        let rec = c.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if cap < k {
            return Err(fail(
                FaimaStatus::BufferTooSmall,
                format!("buffer holds {cap} exemplars, need {k}"),
            ));
        }
        let policy = RetrievalPolicy::for_k(k)?;
        let set = retrieve_exemplars(&idx.index, rec, &ckpt.encoder, &policy)?;
        let dst = std::slice::from_raw_parts_mut(out, cap);
        for (slot, e) in dst.iter_mut().zip(&set.exemplars) {
            let row = idx
                .index
                .ids()
                .iter()
                .position(|x| *x == e.record_id)
                .ok_or_else(|| fail(FaimaStatus::Internal, "exemplar not in index"))?;
            *slot = FaimaExemplar {
                row,
                channel: channel_code(e.channel),
                distance: e.distance,
            };
        }
        *written = set.exemplars.len();
        Ok(())
    })
}
