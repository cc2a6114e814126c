//! C ABI over the `bootsc` library.
//!
//! Every fallible function returns a status code (`BOOTSC_OK` on success).
//! On failure a message is stored per thread and can be read with
//! [`bootsc_last_error`]. Matrices are dense, row-major `double` arrays.
//! Output buffers are allocated by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bootsc::spectral::OrthMode;
use bootsc::{DenseMatrix, Error};

pub const BOOTSC_OK: i32 = 0;
pub const BOOTSC_ERR_NULL: i32 = 1;
pub const BOOTSC_ERR_INVALID: i32 = 2;
pub const BOOTSC_ERR_NUMERICAL: i32 = 3;
pub const BOOTSC_ERR_IO: i32 = 4;
pub const BOOTSC_ERR_CHECKPOINT: i32 = 5;
pub const BOOTSC_ERR_PANIC: i32 = 6;

pub const BOOTSC_ORTH_NONE: i32 = 0;
pub const BOOTSC_ORTH_QR: i32 = 1;
pub const BOOTSC_ORTH_PROCRUSTES: i32 = 2;

/// Trained model loaded from a checkpoint.
pub struct BootscModel {
    model: bootsc::network::ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::NanLoss { .. }
        | Error::NonFinite(_)
        | Error::Underflow { .. }
        | Error::RankDeficient { .. }
        | Error::Asymmetric { .. }
        | Error::IsolatedPoint(_) => BOOTSC_ERR_NUMERICAL,
        Error::Io(_) => BOOTSC_ERR_IO,
        Error::Checkpoint(_) => BOOTSC_ERR_CHECKPOINT,
        _ => BOOTSC_ERR_INVALID,
    }
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_for(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BOOTSC_ERR_NULL, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BOOTSC_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            BOOTSC_ERR_PANIC
        }
    }
}

unsafe fn matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DenseMatrix, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(BOOTSC_ERR_INVALID, format!("{what}: size overflow")))?;
    Ok(DenseMatrix::from_vec(
        rows,
        cols,
        std::slice::from_raw_parts(data, len).to_vec(),
    )?)
}

unsafe fn copy_out(m: &DenseMatrix, out: *mut f64) {
    ptr::copy_nonoverlapping(m.as_slice().as_ptr(), out, m.as_slice().len());
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bootsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bootsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `bootsc train`. On success `*out` owns a
/// model that must be released with [`bootsc_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_load(path: *const c_char, out: *mut *mut BootscModel) -> i32 {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(BOOTSC_ERR_INVALID, "path is not UTF-8".into()))?;
        let trainer = bootsc::checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(BootscModel {
            model: trainer.model,
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`bootsc_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_free(model: *mut BootscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_input_dim(model: *const BootscModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_embed_dim(model: *const BootscModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.embed_dim())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_num_clusters(model: *const BootscModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_clusters())
}

/// Cluster assignment for `n` samples of width `d` (must equal the model's
/// input width). Writes `n` labels and, when `embeddings` is non-null, the
/// `n × embed_dim` unit-norm embeddings.
///
/// # Safety
/// Buffers must have the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn bootsc_model_predict(
    model: *const BootscModel,
    x: *const f64,
    n: usize,
    d: usize,
    labels: *mut u32,
    embeddings: *mut f64,
) -> i32 {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        if d != model.model.input_dim() {
            return Err(Failure(
                BOOTSC_ERR_INVALID,
                format!(
                    "model expects {} features, got {d}",
                    model.model.input_dim()
                ),
            ));
        }
        let x = matrix(x, n, d, "x")?;
        let (pred, z) = bootsc::trainer::predict(&model.model, &x)?;
        for (i, l) in pred.iter().enumerate() {
            *labels.add(i) = *l as u32;
        }
        if !embeddings.is_null() {
            copy_out(&z, embeddings);
        }
        Ok(())
    })
}

/// Fixed-iteration Sinkhorn on an `m × n` score matrix; writes the
/// `m × n` plan (rows sum to 1).
///
/// # Safety
/// `logits` and `plan` must hold `m·n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bootsc_sinkhorn(
    logits: *const f64,
    m: usize,
    n: usize,
    eta: f64,
    iterations: usize,
    plan: *mut f64,
) -> i32 {
    guard(|| {
        if plan.is_null() {
            return Err(null("plan"));
        }
        let s = matrix(logits, m, n, "logits")?;
        let p = bootsc::transport::sinkhorn_algorithm1(&s, eta, iterations)?;
        copy_out(&p.plan, plan);
        Ok(())
    })
}

/// Orthogonalizes an `n × d` matrix with one of the `BOOTSC_ORTH_*` modes;
/// writes the result and, when non-null, `‖Z − Z_new‖_F`.
///
/// # Safety
/// `z` and `z_new` must hold `n·d` doubles.
#[no_mangle]
pub unsafe extern "C" fn bootsc_orthogonalize(
    z: *const f64,
    n: usize,
    d: usize,
    mode: i32,
    z_new: *mut f64,
    inconsistency: *mut f64,
) -> i32 {
    guard(|| {
        if z_new.is_null() {
            return Err(null("z_new"));
        }
        let mode = match mode {
            BOOTSC_ORTH_NONE => OrthMode::None,
            BOOTSC_ORTH_QR => OrthMode::Qr,
            BOOTSC_ORTH_PROCRUSTES => OrthMode::Procrustes,
            other => return Err(Failure(BOOTSC_ERR_INVALID, format!("unknown mode {other}"))),
        };
        let r = bootsc::spectral::orthogonalize(&matrix(z, n, d, "z")?, mode)?;
        copy_out(&r.z_new, z_new);
        if !inconsistency.is_null() {
            *inconsistency = r.inconsistency;
        }
        Ok(())
    })
}

/// Clustering metrics of two label vectors of length `n`.
///
/// # Safety
/// Label arrays must hold `n` entries; outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bootsc_evaluate(
    y_true: *const u32,
    y_pred: *const u32,
    n: usize,
    nmi: *mut f64,
    acc: *mut f64,
    ari: *mut f64,
) -> i32 {
    guard(|| {
        if y_true.is_null() || y_pred.is_null() {
            return Err(null("labels"));
        }
        if nmi.is_null() || acc.is_null() || ari.is_null() {
            return Err(null("output"));
        }
        let conv = |p: *const u32| {
            std::slice::from_raw_parts(p, n)
                .iter()
                .map(|&v| v as usize)
                .collect::<Vec<_>>()
        };
        let r = bootsc::metrics::evaluate(&conv(y_true), &conv(y_pred))?;
        *nmi = r.nmi;
        *acc = r.acc;
        *ari = r.ari;
        Ok(())
    })
}
