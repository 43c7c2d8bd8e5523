//! C ABI for loading trained checkpoints and event datasets, scoring them,
//! and reading learned Granger graphs.
//!
//! Every fallible call returns a [`TppStatus`]; on failure the message is
//! available from [`tpp_last_error`] on the same thread. Handles are opaque
//! and released with their `_free` function. No call takes ownership of
//! caller memory.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tpp_core::cli::{synth_sequences, SynthKind, SynthParams};
use tpp_core::events::{load_dataset, Dataset, EventSequence, MAX_SEQ_LEN};
use tpp_core::granger::granger_certificate;
use tpp_core::model::{Mode, Model};
use tpp_core::synth::HawkesSpec;
use tpp_core::trainer::{self, Checkpoint, EvalOptions};
use tpp_core::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TppStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range, or the handle does not support the call.
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    /// The data violates an input contract (ordering, type range, emptiness).
    Validation = 6,
    /// A computation left its numeric domain.
    Numeric = 7,
    Divergence = 8,
    Unstable = 9,
    /// A bug: the library panicked. The handle arguments are still valid.
    Panic = 10,
}

/// Metrics over a dataset. MAPE values are fractions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TppMetrics {
    /// Mean time NLL per event with a positive interval.
    pub nll: f64,
    pub mape_interval: f64,
    pub mape_printed: f64,
    pub acc1: f64,
    pub acc3: f64,
    pub n_events: usize,
}

/// A loaded checkpoint.
pub struct TppModel {
    model: Model,
    time_scale: Option<f64>,
    batch_size: usize,
}

/// A set of event sequences with 1-based marks.
pub struct TppDataset {
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TppStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => TppStatus::Io,
            Error::Parse(_) => TppStatus::Parse,
            Error::Config(_) => TppStatus::Config,
            Error::Validation { .. } | Error::Degenerate(_) => TppStatus::Validation,
            Error::Domain(_) => TppStatus::Numeric,
            Error::Divergence(_) => TppStatus::Divergence,
            Error::Unstable(_) => TppStatus::Unstable,
            Error::Shape(_) | Error::Contract(_) | Error::Index(_) | Error::Size(_) => TppStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TppStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TppStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TppStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TppStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(TppStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(TppStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    let s = non_null(p, what)?;
    let s = CStr::from_ptr(s).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tpp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Reads a JSON-lines dataset (`timestamps`, `types` per line). Sequences
/// longer than the library limit are truncated.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_load(path: *const c_char, num_types: usize, out: *mut *mut TppDataset) -> TppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path, "path")?;
        if num_types == 0 {
            return Err(invalid("num_types must be at least 1"));
        }
        let data = load_dataset(&path, num_types)?.clipped(MAX_SEQ_LEN);
        *out = Box::into_raw(Box::new(TppDataset { data }));
        Ok(())
    })
}

/// Builds a dataset from flat arrays: sequence `s` owns the next
/// `lengths[s]` entries of `times` and `marks` (marks 1-based).
///
/// # Safety
/// `lengths` must hold `n_sequences` values, and `times` and `marks` their
/// sum; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_from_arrays(
    times: *const f64,
    marks: *const u32,
    lengths: *const usize,
    n_sequences: usize,
    num_types: usize,
    out: *mut *mut TppDataset,
) -> TppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if num_types == 0 {
            return Err(invalid("num_types must be at least 1"));
        }
        let lengths: &[usize] =
            if n_sequences == 0 { &[] } else { std::slice::from_raw_parts(non_null(lengths, "lengths")?, n_sequences) };
        let total: usize = lengths.iter().sum();
        let (times, marks): (&[f64], &[u32]) = if total == 0 {
            (&[], &[])
        } else {
            (
                std::slice::from_raw_parts(non_null(times, "times")?, total),
                std::slice::from_raw_parts(non_null(marks, "marks")?, total),
            )
        };
        let mut seqs = Vec::with_capacity(n_sequences);
        let mut at = 0;
        for (i, &n) in lengths.iter().enumerate() {
            let seq = EventSequence::new(
                times[at..at + n].to_vec(),
                marks[at..at + n].iter().map(|&m| m as usize).collect(),
                i,
            )?;
            seqs.push(seq.clipped(MAX_SEQ_LEN));
            at += n;
        }
        *out = Box::into_raw(Box::new(TppDataset { data: Dataset::new(seqs, num_types)? }));
        Ok(())
    })
}

/// Simulates `n_sequences` sequences of the default two-type Hawkes process
/// on `[0, horizon]`; sequence `k` uses random stream `k` of `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_synth_hawkes(n_sequences: usize, seed: u64, horizon: f64, out: *mut *mut TppDataset) -> TppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = SynthParams {
            kind: SynthKind::Hawkes,
            n_sequences,
            seed,
            horizon: Some(horizon),
            rate: 1.0,
            mu: 1.0,
            alpha: 0.2,
            spec: HawkesSpec::default(),
        };
        let data = Dataset::new(synth_sequences(&p)?, 2)?;
        *out = Box::into_raw(Box::new(TppDataset { data }));
        Ok(())
    })
}

/// Number of sequences; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_len(ds: *const TppDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.len())
}

/// Total number of events; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_num_events(ds: *const TppDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.num_events())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tpp_dataset_free(ds: *mut TppDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a checkpoint written by `tpp train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_load(path: *const c_char, out: *mut *mut TppModel) -> TppStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path, "path")?;
        let ck = Checkpoint::load(&path)?;
        let model = ck.to_model()?;
        let batch_size = ck.train.as_ref().map_or(64, |t| t.batch_size);
        *out = Box::into_raw(Box::new(TppModel { model, time_scale: ck.time_scale, batch_size }));
        Ok(())
    })
}

/// Number of event types; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_num_types(model: *const TppModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_types())
}

/// 1 when the model was trained in Granger mode, else 0.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_is_granger(model: *const TppModel) -> i32 {
    model.as_ref().map_or(0, |m| (m.model.cfg.mode == Mode::Granger) as i32)
}

/// NLL, both MAPE variants and top-1 / top-3 accuracy of `model` on `ds`.
/// Times are rescaled with the checkpoint's normalization constant first.
/// `points` sets the quadrature resolution of next-time predictions.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_evaluate(
    model: *const TppModel,
    ds: *const TppDataset,
    points: usize,
    out: *mut TppMetrics,
) -> TppStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let d = non_null(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        if d.data.num_types != m.model.num_types() {
            return Err(Failure(
                TppStatus::Validation,
                format!("dataset has {} types, model {}", d.data.num_types, m.model.num_types()),
            ));
        }
        if points < 2 {
            return Err(invalid("points must be at least 2"));
        }
        let scaled;
        let data = match m.time_scale {
            Some(s) => {
                scaled = d.data.normalize_times(s)?;
                &scaled
            }
            None => &d.data,
        };
        let opts = EvalOptions { batch_size: m.batch_size, points, ..EvalOptions::default() };
        let r = trainer::evaluate(&m.model, data, &opts)?;
        *out = TppMetrics {
            nll: r.nll,
            mape_interval: r.mape_interval,
            mape_printed: r.mape_printed,
            acc1: r.acc1,
            acc3: r.acc3,
            n_events: r.n_events,
        };
        Ok(())
    })
}

/// Copies the `M × M` edge probabilities (row = target, column = source)
/// into `out`, which must hold `capacity >= M * M` values.
///
/// # Safety
/// `model` must be live; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_edge_probs(model: *const TppModel, out: *mut f64, capacity: usize) -> TppStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let out = out_ptr(out, "out")?;
        let g = m.model.eval_graph.as_ref().ok_or_else(|| invalid("the model has no Granger graph"))?;
        if capacity < g.len() {
            return Err(invalid(format!("capacity {capacity} is below {}", g.len())));
        }
        std::slice::from_raw_parts_mut(out, g.len()).copy_from_slice(g.data());
        Ok(())
    })
}

/// Largest sensitivity of the `target` intensity to timestamps of earlier
/// `source` events in sequence `index` of `ds`, under the model's
/// evaluation graph. Types are 1-based. Zero when the graph closes the edge.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_certificate(
    model: *const TppModel,
    ds: *const TppDataset,
    index: usize,
    source: usize,
    target: usize,
    out: *mut f64,
) -> TppStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let d = non_null(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let seq = d.data.sequences.get(index).ok_or_else(|| invalid(format!("sequence {index} out of range")))?;
        let seq = match m.time_scale {
            Some(s) => Dataset::new(vec![seq.clone()], d.data.num_types)?.normalize_times(s)?.sequences.remove(0),
            None => seq.clone(),
        };
        *out = granger_certificate(&m.model, &seq, source, target)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tpp_model_free(model: *mut TppModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
