//! C ABI over `adaptive_replay`.
//!
//! Models and bandits are opaque heap handles created by `amr_*_new` and
//! released by the matching `amr_*_free`. Every fallible call returns an
//! [`AmrStatus`]; on failure the message is available from
//! [`amr_last_error_message`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use adaptive_replay::bandit::BanditState;
use adaptive_replay::harness::{cmd_compare, cmd_run, RunConfig};
use adaptive_replay::model::{Activation, Example, Head, ModelParams, Target};
use adaptive_replay::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad configuration or argument values.
    InvalidArgument = 2,
    /// A dataset or manifest file could not be parsed.
    Load = 3,
    /// Non-finite loss or divergence during training.
    Numeric = 4,
    Io = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Hidden-layer nonlinearity codes for [`amr_model_new`].
#[repr(u32)]
#[derive(Debug, Clone, Copy)]
pub enum AmrActivation {
    Tanh = 0,
    Relu = 1,
}

/// Output head codes for [`amr_model_new`].
#[repr(u32)]
#[derive(Debug, Clone, Copy)]
pub enum AmrHead {
    Regression = 0,
    Classification = 1,
}

/// Opaque MLP handle.
pub struct AmrModel {
    inner: ModelParams,
}

/// Opaque bandit handle.
pub struct AmrBandit {
    inner: BanditState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AmrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Usage(_) => AmrStatus::InvalidArgument,
            Error::Load { .. } => AmrStatus::Load,
            Error::Numeric { .. } | Error::Divergence { .. } => AmrStatus::Numeric,
            Error::Io { .. } => AmrStatus::Io,
            Error::Internal(_) => AmrStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AmrStatus::NullPointer, format!("{what} is null"))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AmrStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            AmrStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("config_path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            AmrStatus::InvalidArgument,
            "config_path is not UTF-8".into(),
        )
    })?;
    Ok(PathBuf::from(s))
}

fn copy_out(values: &[f64], out: &mut [f64]) -> Result<(), Failure> {
    if out.len() < values.len() {
        return Err(Failure(
            AmrStatus::BufferTooSmall,
            format!("need {} values, buffer holds {}", values.len(), out.len()),
        ));
    }
    out[..values.len()].copy_from_slice(values);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn amr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a randomly initialised MLP. `layer_sizes` lists the input
/// dimension followed by each layer's width; `activation` and `head` take
/// [`AmrActivation`] and [`AmrHead`] codes.
///
/// # Safety
/// `layer_sizes` must point to `n_sizes` readable values and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn amr_model_new(
    layer_sizes: *const usize,
    n_sizes: usize,
    activation: u32,
    head: u32,
    seed: u64,
    out: *mut *mut AmrModel,
) -> AmrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sizes = slice(layer_sizes, n_sizes, "layer_sizes")?;
        let activation = match activation {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            v => {
                return Err(Failure(
                    AmrStatus::InvalidArgument,
                    format!("unknown activation code {v}"),
                ))
            }
        };
        let head = match head {
            0 => Head::Regression,
            1 => Head::Classification,
            v => {
                return Err(Failure(
                    AmrStatus::InvalidArgument,
                    format!("unknown head code {v}"),
                ))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = ModelParams::init(sizes, activation, head, &mut rng)?;
        *out = Box::into_raw(Box::new(AmrModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`amr_model_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn amr_model_free(model: *mut AmrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amr_model_num_params(model: *const AmrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_params())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amr_model_input_dim(model: *const AmrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amr_model_output_dim(model: *const AmrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.output_dim())
}

/// Raw network outputs (logits for classification) into `out`.
///
/// # Safety
/// `features` must hold `n_features` values and `out` must have room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn amr_model_forward(
    model: *const AmrModel,
    features: *const f64,
    n_features: usize,
    out: *mut f64,
    out_len: usize,
) -> AmrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice(features, n_features, "features")?;
        let y = m.inner.forward(x)?;
        copy_out(&y, slice_mut(out, out_len, "out")?)
    })
}

unsafe fn loss_of(
    model: *const AmrModel,
    features: *const f64,
    n_features: usize,
    target: Target,
    out: *mut f64,
) -> AmrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out_loss"));
        }
        let ex = Example {
            id: 0,
            task_id: 0,
            features: slice(features, n_features, "features")?.to_vec(),
            target,
        };
        *out = m.inner.per_example_loss(&ex)?;
        Ok(())
    })
}

/// Mean squared error of one regression example.
///
/// # Safety
/// Pointers must cover the given lengths; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amr_model_regression_loss(
    model: *const AmrModel,
    features: *const f64,
    n_features: usize,
    target: *const f64,
    n_target: usize,
    out_loss: *mut f64,
) -> AmrStatus {
    let t = match slice(target, n_target, "target") {
        Ok(t) => t.to_vec(),
        Err(Failure(s, msg)) => {
            set_last_error(msg);
            return s;
        }
    };
    loss_of(model, features, n_features, Target::Regression(t), out_loss)
}

/// Cross-entropy of one classification example with label `class`.
///
/// # Safety
/// `features` must hold `n_features` values; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amr_model_class_loss(
    model: *const AmrModel,
    features: *const f64,
    n_features: usize,
    class: usize,
    out_loss: *mut f64,
) -> AmrStatus {
    loss_of(model, features, n_features, Target::Class(class), out_loss)
}

/// Bandit over `k` clusters with zero initial means.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amr_bandit_new(
    k: usize,
    beta: f64,
    temperature: f64,
    out: *mut *mut AmrBandit,
) -> AmrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = BanditState::new(k, beta, temperature)?;
        *out = Box::into_raw(Box::new(AmrBandit { inner }));
        Ok(())
    })
}

/// # Safety
/// `bandit` must come from [`amr_bandit_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn amr_bandit_free(bandit: *mut AmrBandit) {
    if !bandit.is_null() {
        drop(Box::from_raw(bandit));
    }
}

/// One moving-average step with this iteration's per-cluster probe means.
///
/// # Safety
/// `probe_means` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn amr_bandit_update(
    bandit: *mut AmrBandit,
    probe_means: *const f64,
    k: usize,
) -> AmrStatus {
    guard(|| {
        let b = bandit.as_mut().ok_or_else(|| null("bandit"))?;
        b.inner
            .update_means(slice(probe_means, k, "probe_means")?)?;
        Ok(())
    })
}

/// Current per-cluster means.
///
/// # Safety
/// `out` must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn amr_bandit_means(
    bandit: *const AmrBandit,
    out: *mut f64,
    out_len: usize,
) -> AmrStatus {
    guard(|| {
        let b = bandit.as_ref().ok_or_else(|| null("bandit"))?;
        copy_out(b.inner.means(), slice_mut(out, out_len, "out")?)
    })
}

/// Replay distribution over clusters (tempered softmax of the means).
///
/// # Safety
/// `out` must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn amr_bandit_distribution(
    bandit: *const AmrBandit,
    out: *mut f64,
    out_len: usize,
) -> AmrStatus {
    guard(|| {
        let b = bandit.as_ref().ok_or_else(|| null("bandit"))?;
        copy_out(
            &b.inner.boltzmann_distribution(),
            slice_mut(out, out_len, "out")?,
        )
    })
}

unsafe fn load_config(config_path: *const c_char) -> Result<RunConfig, Failure> {
    let path = path_arg(config_path)?;
    let mut cfg = RunConfig::load(&path)?;
    cfg.apply_env();
    Ok(cfg)
}

/// Same as `amr run <config>`: trains the configured strategy on every seed
/// and writes result files to the output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amr_run(config_path: *const c_char) -> AmrStatus {
    guard(|| {
        cmd_run(&load_config(config_path)?)?;
        Ok(())
    })
}

/// Same as `amr compare <config>`. When `out_table_json` is not NULL it
/// receives the table rows as a JSON array; release it with
/// [`amr_string_free`].
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_table_json` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn amr_compare(
    config_path: *const c_char,
    out_table_json: *mut *mut c_char,
) -> AmrStatus {
    guard(|| {
        let out = cmd_compare(&load_config(config_path)?)?;
        if !out_table_json.is_null() {
            let json = serde_json::to_string(&out.rows)
                .map_err(|e| Failure(AmrStatus::Internal, e.to_string()))?;
            let c = CString::new(json).map_err(|e| Failure(AmrStatus::Internal, e.to_string()))?;
            *out_table_json = c.into_raw();
        }
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn amr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
