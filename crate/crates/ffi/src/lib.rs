//! C ABI for `mtpp`.
//!
//! Models, policies and datasets are opaque handles created by `*_load`,
//! `mtpp_simulate` or `mtpp_policy_uniform` and released with the matching
//! `*_free`. Every fallible call returns an [`MtppStatus`]; on failure
//! [`mtpp_last_error`] describes the error for the calling thread. Outputs
//! are written through pointers only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mtpp::delay_dist::PiecewisePower;
use mtpp::event_model::{ObservationWindow, UserRecord};
use mtpp::io::{self, AnyModel, WindowSource};
use mtpp::likelihood::per_user_log_likelihood;
use mtpp::policy::PolicyParams;
use mtpp::reinforce::{expected_utility_seeded, UtilitySpec};
use mtpp::simulator::{sample_dataset, SimConfig};
use mtpp::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtppStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    ShapeMismatch = 6,
    VersionMismatch = 7,
    InvalidParams = 8,
    Divergence = 9,
    Internal = 10,
}

impl From<&Error> for MtppStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => Self::Io,
            Error::Json(_) | Error::ParseError { .. } => Self::Parse,
            Error::UnorderedTimestamps { .. }
            | Error::EventOutsideWindow { .. }
            | Error::ActionOnNonRequest { .. }
            | Error::RequestWithoutAction { .. }
            | Error::ValidationError { .. }
            | Error::InvalidRecord { .. } => Self::Validation,
            Error::ShapeMismatch(_) => Self::ShapeMismatch,
            Error::VersionMismatch { .. } => Self::VersionMismatch,
            Error::InvalidParams(_) | Error::EtaOutOfRange(_) => Self::InvalidParams,
            Error::DivergenceDetected { .. } | Error::NonFiniteActivation { .. } => Self::Divergence,
            _ => Self::InvalidArgument,
        }
    }
}

/// A loaded history model (encoder or tabular).
pub struct MtppModel {
    inner: AnyModel,
}

/// Action policy parameters.
pub struct MtppPolicy {
    inner: PolicyParams,
}

/// A set of user records.
pub struct MtppDataset {
    inner: Vec<UserRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(MtppStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MtppStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MtppStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MtppStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MtppStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MtppStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            MtppStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_raw<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn mtpp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mtpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file (encoder or tabular).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtpp_model_load(path: *const c_char, out: *mut *mut MtppModel) -> MtppStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = into_raw(MtppModel { inner: io::load_model(&path)? });
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtpp_model_free(model: *mut MtppModel) {
    free(model)
}

/// Event vocabulary of a model: type count, action count, request type.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_model_schema(
    model: *const MtppModel,
    num_types: *mut u32,
    num_actions: *mut u32,
    request_type: *mut u32,
) -> MtppStatus {
    guard(|| {
        let s = *handle(model, "model")?.inner.schema();
        let (nt, na, rt) = (
            out_arg(num_types, "num_types")?,
            out_arg(num_actions, "num_actions")?,
            out_arg(request_type, "request_type")?,
        );
        (*nt, *na, *rt) = (s.num_types, s.num_actions, s.request_type);
        Ok(())
    })
}

/// Loads a policy file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtpp_policy_load(path: *const c_char, out: *mut *mut MtppPolicy) -> MtppStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = into_raw(MtppPolicy { inner: io::load_policy(&path)? });
        Ok(())
    })
}

/// The uniform policy over the model's actions.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mtpp_policy_uniform(model: *const MtppModel, out: *mut *mut MtppPolicy) -> MtppStatus {
    guard(|| {
        let schema = *handle(model, "model")?.inner.schema();
        *out_arg(out, "out")? = into_raw(MtppPolicy { inner: PolicyParams::uniform(schema) });
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtpp_policy_free(policy: *mut MtppPolicy) {
    free(policy)
}

/// Loads an event log for `model`'s vocabulary. `windows` is either
/// `"t0,t_max"`, a windows file path, or null for `<events>.windows.jsonl`.
///
/// # Safety
/// String arguments must be NUL-terminated; `model` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_dataset_load(
    events: *const c_char,
    windows: *const c_char,
    model: *const MtppModel,
    out: *mut *mut MtppDataset,
) -> MtppStatus {
    guard(|| {
        let events = path_arg(events, "events")?;
        let source = if windows.is_null() {
            WindowSource::PerUser(io::windows_path(&events))
        } else {
            let w = CStr::from_ptr(windows).to_str().map_err(|_| invalid("windows is not valid UTF-8"))?;
            WindowSource::parse(w)?
        };
        let schema = handle(model, "model")?.inner.schema();
        let out = out_arg(out, "out")?;
        *out = into_raw(MtppDataset { inner: io::load_dataset(&events, schema, &source)? });
        Ok(())
    })
}

/// Writes the event log to `path` and the windows to `<path>.windows.jsonl`.
///
/// # Safety
/// `dataset` must be valid and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mtpp_dataset_save(dataset: *const MtppDataset, path: *const c_char) -> MtppStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        io::write_dataset(&path_arg(path, "path")?, &d.inner)?;
        Ok(())
    })
}

/// Number of user records.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_dataset_len(dataset: *const MtppDataset, out: *mut usize) -> MtppStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(dataset, "dataset")?.inner.len();
        Ok(())
    })
}

/// Number of events of record `user`.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_dataset_num_events(
    dataset: *const MtppDataset,
    user: usize,
    out: *mut usize,
) -> MtppStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let r =
            d.inner.get(user).ok_or_else(|| invalid(format!("user index {user} out of range 0..{}", d.inner.len())))?;
        *out_arg(out, "out")? = r.len();
        Ok(())
    })
}

/// Simulates `n` users over `[t0, t0 + t_max]`. `policy` may be null for
/// the uniform policy.
///
/// # Safety
/// `model` and `out` must be valid; `policy` valid or null.
#[no_mangle]
pub unsafe extern "C" fn mtpp_simulate(
    model: *const MtppModel,
    policy: *const MtppPolicy,
    n: usize,
    t0: f64,
    t_max: f64,
    seed: u64,
    out: *mut *mut MtppDataset,
) -> MtppStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let uniform;
        let p = match policy.as_ref() {
            Some(p) => &p.inner,
            None => {
                uniform = PolicyParams::uniform(*m.schema());
                &uniform
            }
        };
        let out = out_arg(out, "out")?;
        let cfg = SimConfig { t0, t_max, users: n, seed };
        let data = match m {
            AnyModel::Encoder(w) => sample_dataset(w, p, &cfg)?,
            AnyModel::Tabular(t) => sample_dataset(t, p, &cfg)?,
        };
        *out = into_raw(MtppDataset { inner: data });
        Ok(())
    })
}

/// Total log-likelihood of `dataset` in `total`; per-user values are also
/// written to `per_user` (capacity `per_user_len`) when it is not null.
///
/// # Safety
/// `per_user` must hold at least `per_user_len` doubles when not null.
#[no_mangle]
pub unsafe extern "C" fn mtpp_loglik(
    model: *const MtppModel,
    dataset: *const MtppDataset,
    per_user: *mut f64,
    per_user_len: usize,
    total: *mut f64,
) -> MtppStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let d = &handle(dataset, "dataset")?.inner;
        let total = out_arg(total, "total")?;
        if !per_user.is_null() && per_user_len < d.len() {
            return Err(invalid(format!("per_user holds {per_user_len} values, dataset has {}", d.len())));
        }
        let values = match m {
            AnyModel::Encoder(w) => per_user_log_likelihood(d, w)?,
            AnyModel::Tabular(t) => per_user_log_likelihood(d, t)?,
        };
        if !per_user.is_null() {
            std::slice::from_raw_parts_mut(per_user, d.len()).copy_from_slice(&values);
        }
        *total = values.iter().sum();
        Ok(())
    })
}

/// Monte-Carlo expected utility with per-type rewards and per-action costs.
///
/// # Safety
/// Arrays must hold the given number of doubles; `policy` may be null.
#[no_mangle]
pub unsafe extern "C" fn mtpp_expected_utility(
    model: *const MtppModel,
    policy: *const MtppPolicy,
    type_rewards: *const f64,
    num_rewards: usize,
    action_costs: *const f64,
    num_costs: usize,
    n: usize,
    t0: f64,
    t_max: f64,
    seed: u64,
    mean: *mut f64,
    se: *mut f64,
) -> MtppStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let s = *m.schema();
        if num_rewards != s.num_types as usize || num_costs != s.num_actions as usize {
            return Err(Failure(
                MtppStatus::ShapeMismatch,
                format!(
                    "expected {} rewards and {} costs, got {num_rewards} and {num_costs}",
                    s.num_types, s.num_actions
                ),
            ));
        }
        let spec = UtilitySpec {
            type_rewards: slice_arg(type_rewards, num_rewards, "type_rewards")?.to_vec(),
            action_costs: slice_arg(action_costs, num_costs, "action_costs")?.to_vec(),
        };
        let uniform;
        let p = match policy.as_ref() {
            Some(p) => &p.inner,
            None => {
                uniform = PolicyParams::uniform(s);
                &uniform
            }
        };
        let (mean, se) = (out_arg(mean, "mean")?, out_arg(se, "se")?);
        let window = ObservationWindow::new(t0, t_max)?;
        let (mu, err) = match m {
            AnyModel::Encoder(w) => expected_utility_seeded(w, p, window, &spec, n, seed)?,
            AnyModel::Tabular(t) => expected_utility_seeded(t, p, window, &spec, n, seed)?,
        };
        (*mean, *se) = (mu, err);
        Ok(())
    })
}

fn pp(alpha: f64, beta: f64, tau_star: f64) -> Result<PiecewisePower, Failure> {
    Ok(PiecewisePower::new(alpha, beta, tau_star)?)
}

/// Density of the piecewise-power delay law at `tau`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_pp_density(alpha: f64, beta: f64, tau_star: f64, tau: f64, out: *mut f64) -> MtppStatus {
    guard(|| {
        *out_arg(out, "out")? = pp(alpha, beta, tau_star)?.density(tau);
        Ok(())
    })
}

/// CDF of the piecewise-power delay law at `tau`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_pp_cdf(alpha: f64, beta: f64, tau_star: f64, tau: f64, out: *mut f64) -> MtppStatus {
    guard(|| {
        *out_arg(out, "out")? = pp(alpha, beta, tau_star)?.cdf(tau);
        Ok(())
    })
}

/// Quantile at level `eta` in `[0, 1)`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtpp_pp_inverse_cdf(
    alpha: f64,
    beta: f64,
    tau_star: f64,
    eta: f64,
    out: *mut f64,
) -> MtppStatus {
    guard(|| {
        *out_arg(out, "out")? = pp(alpha, beta, tau_star)?.inverse_cdf(eta)?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mtpp_dataset_free(dataset: *mut MtppDataset) {
    free(dataset)
}
