//! C ABI over the `samq` library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`SamqStatus`]; the message of the most recent failure on the calling
//! thread is available from [`samq_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use samq::aggregation::{self, Aggregation};
use samq::data::{self, Dataset, InitDistribution, SamplingMode};
use samq::diagnostics::{self, Theorem2Inputs};
use samq::env::{self, BusEnvConfig};
use samq::irl::{self, IrlOptions, PolicyModel};
use samq::mdp::{self, MdpSpec, QFunction, SolverOptions, ThetaVector};
use samq::nfmle::{self, NfmleOptions};
use samq::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamqStatus {
    Ok = 0,
    InvalidArgument = 1,
    Convergence = 2,
    Coverage = 3,
    RewardBound = 4,
    BoundUndefined = 5,
    DiagnosticUnavailable = 6,
    Io = 7,
    Parse = 8,
    NullPointer = 9,
    Panic = 10,
}

impl From<&Error> for SamqStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => SamqStatus::InvalidArgument,
            Error::Convergence { .. } => SamqStatus::Convergence,
            Error::Coverage(_) => SamqStatus::Coverage,
            Error::RewardBound { .. } => SamqStatus::RewardBound,
            Error::BoundUndefined { .. } => SamqStatus::BoundUndefined,
            Error::DiagnosticUnavailable(_) => SamqStatus::DiagnosticUnavailable,
            Error::Io(_) => SamqStatus::Io,
            Error::Json(_) | Error::Csv(_) => SamqStatus::Parse,
        }
    }
}

/// Tabular MDP.
pub struct SamqMdp(MdpSpec);
/// Transition dataset.
pub struct SamqDataset(Dataset);
/// Q-function on a finite state set.
pub struct SamqQFunction(QFunction);
/// State aggregation.
pub struct SamqAggregation(Aggregation);

/// Inputs of the finite-sample bound; mirrors the library struct.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SamqBoundInputs {
    pub n_s: usize,
    pub n_a: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub c_h: f64,
    pub c_uni: f64,
    pub c_q: f64,
    pub c_clustering: f64,
    pub n: f64,
    pub delta: f64,
    pub theta_card: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SamqBound {
    pub bias: f64,
    pub variance: f64,
    pub total: f64,
    /// Precondition margin when the status is `BoundUndefined`.
    pub margin: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SamqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SamqStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SamqStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> SamqStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SamqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SamqStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SamqStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn theta_arg(p: *const f64, len: usize) -> Result<ThetaVector, Failure> {
    Ok(ThetaVector::new(slice_arg(p, len, "theta")?.to_vec())?)
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
#[no_mangle]
pub unsafe extern "C" fn samq_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Builds the bus environment from a JSON config; `config_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn samq_bus_env_new(config_json: *const c_char, out: *mut *mut SamqMdp) -> SamqStatus {
    guard(|| {
        let cfg: BusEnvConfig = if config_json.is_null() {
            BusEnvConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        put(out, SamqMdp(env::make_bus_env(&cfg)?))
    })
}

/// Parses an MDP document.
#[no_mangle]
pub unsafe extern "C" fn samq_mdp_from_json(json: *const c_char, out: *mut *mut SamqMdp) -> SamqStatus {
    guard(|| put(out, SamqMdp(MdpSpec::from_json(str_arg(json, "json")?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn samq_mdp_free(mdp: *mut SamqMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Number of states, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn samq_mdp_n_states(mdp: *const SamqMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_states())
}

/// Number of actions, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn samq_mdp_n_actions(mdp: *const SamqMdp) -> usize {
    mdp.as_ref().map_or(0, |m| m.0.n_actions())
}

/// Solves the soft Bellman fixed point. `out_q` holds `n_states * n_actions`
/// values, row-major by state; `out_iterations` may be null.
#[no_mangle]
pub unsafe extern "C" fn samq_soft_q_solve(
    mdp: *const SamqMdp,
    theta: *const f64,
    n_theta: usize,
    tol: f64,
    max_iter: usize,
    out_q: *mut f64,
    out_iterations: *mut usize,
) -> SamqStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.0;
        let theta = theta_arg(theta, n_theta)?;
        if out_q.is_null() {
            return Err(null("out_q"));
        }
        let sol = mdp::soft_q_solve_from(m, &theta, None, SolverOptions::new(tol, max_iter)?)?;
        ptr::copy_nonoverlapping(sol.q.table().as_ptr(), out_q, sol.q.table().len());
        if !out_iterations.is_null() {
            *out_iterations = sol.iterations;
        }
        Ok(())
    })
}

/// Simulates `n` i.i.d. transitions with uniform initial states.
#[no_mangle]
pub unsafe extern "C" fn samq_simulate(
    mdp: *const SamqMdp,
    theta: *const f64,
    n_theta: usize,
    n: usize,
    seed: u64,
    out: *mut *mut SamqDataset,
) -> SamqStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.0;
        let theta = theta_arg(theta, n_theta)?;
        let ds = data::simulate(m, &theta, n, seed, &InitDistribution::Uniform, SamplingMode::Iid)?;
        put(out, SamqDataset(ds))
    })
}

/// Reads a dataset CSV and its metadata sidecar.
#[no_mangle]
pub unsafe extern "C" fn samq_dataset_read_csv(path: *const c_char, out: *mut *mut SamqDataset) -> SamqStatus {
    guard(|| put(out, SamqDataset(Dataset::read_csv(Path::new(str_arg(path, "path")?))?)))
}

#[no_mangle]
pub unsafe extern "C" fn samq_dataset_write_csv(dataset: *const SamqDataset, path: *const c_char) -> SamqStatus {
    guard(|| Ok(handle(dataset, "dataset")?.0.write_csv(Path::new(str_arg(path, "path")?))?))
}

/// Number of transitions, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn samq_dataset_len(dataset: *const SamqDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn samq_dataset_free(dataset: *mut SamqDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Estimates Q on the dataset's states with a logit policy of the given degree.
#[no_mangle]
pub unsafe extern "C" fn samq_estimate_q(
    dataset: *const SamqDataset,
    gamma: f64,
    degree: usize,
    anchor: usize,
    out: *mut *mut SamqQFunction,
) -> SamqStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let opts = IrlOptions { policy: PolicyModel::Logit { degree, ridge: 1e-8 }, anchor, ..IrlOptions::default() };
        put(out, SamqQFunction(irl::estimate_q(ds, gamma, &opts)?.q))
    })
}

#[no_mangle]
pub unsafe extern "C" fn samq_qfunction_n_states(q: *const SamqQFunction) -> usize {
    q.as_ref().map_or(0, |q| q.0.n_states())
}

#[no_mangle]
pub unsafe extern "C" fn samq_qfunction_free(q: *mut SamqQFunction) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// K-means aggregation of the Q-function's states on their Q-vectors.
#[no_mangle]
pub unsafe extern "C" fn samq_cluster_states(
    q: *const SamqQFunction,
    n_s: usize,
    seed: u64,
    out: *mut *mut SamqAggregation,
) -> SamqStatus {
    guard(|| {
        let q = &handle(q, "q")?.0;
        let states = q.states().to_vec();
        let agg = aggregation::cluster_states(q, &states, n_s, seed, aggregation::DEFAULT_RESTARTS)?;
        put(out, SamqAggregation(agg))
    })
}

/// Quantile-grid aggregation of the dataset's observed states.
#[no_mangle]
pub unsafe extern "C" fn samq_ad_hoc_aggregation(
    dataset: *const SamqDataset,
    n_s: usize,
    out: *mut *mut SamqAggregation,
) -> SamqStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        put(out, SamqAggregation(aggregation::ad_hoc_aggregation(ds.support().points(), n_s)?))
    })
}

/// Identity aggregation over the MDP's states.
#[no_mangle]
pub unsafe extern "C" fn samq_identity_aggregation(mdp: *const SamqMdp, out: *mut *mut SamqAggregation) -> SamqStatus {
    guard(|| {
        let m = &handle(mdp, "mdp")?.0;
        put(out, SamqAggregation(Aggregation::identity(Arc::clone(m.state_space()))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn samq_aggregation_n_s(agg: *const SamqAggregation) -> usize {
    agg.as_ref().map_or(0, |a| a.0.n_s())
}

/// JSON document of the aggregation; release with [`samq_string_free`].
#[no_mangle]
pub unsafe extern "C" fn samq_aggregation_to_json(agg: *const SamqAggregation, out: *mut *mut c_char) -> SamqStatus {
    guard(|| {
        let json = handle(agg, "aggregation")?.0.to_json()?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn samq_aggregation_free(agg: *mut SamqAggregation) {
    if !agg.is_null() {
        drop(Box::from_raw(agg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn samq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Aggregated NF-MLE with default Nelder-Mead options. Rewards come from the
/// dataset metadata. `out_theta` holds `n_theta` values; `out_log_likelihood` may be null.
#[no_mangle]
pub unsafe extern "C" fn samq_nfmle_estimate(
    dataset: *const SamqDataset,
    agg: *const SamqAggregation,
    theta_init: *const f64,
    n_theta: usize,
    out_theta: *mut f64,
    out_log_likelihood: *mut f64,
) -> SamqStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let agg = &handle(agg, "aggregation")?.0;
        let init = theta_arg(theta_init, n_theta)?;
        if out_theta.is_null() {
            return Err(null("out_theta"));
        }
        let rewards = nfmle::dataset_rewards(ds)?;
        let report = nfmle::nfmle_estimate(ds, agg, &rewards, &init, &NfmleOptions::default())?;
        ptr::copy_nonoverlapping(report.theta_hat.values.as_ptr(), out_theta, n_theta);
        if !out_log_likelihood.is_null() {
            *out_log_likelihood = report.log_likelihood;
        }
        Ok(())
    })
}

/// Evaluates the finite-sample bound. On `BoundUndefined` only `out->margin` is set.
#[no_mangle]
pub unsafe extern "C" fn samq_theorem2_bound(inputs: *const SamqBoundInputs, out: *mut SamqBound) -> SamqStatus {
    guard(|| {
        let p = *handle(inputs, "inputs")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inputs = Theorem2Inputs {
            n_s: p.n_s,
            n_a: p.n_a,
            gamma: p.gamma,
            r_max: p.r_max,
            c_h: p.c_h,
            c_uni: p.c_uni,
            c_q: p.c_q,
            c_clustering: p.c_clustering,
            n: p.n,
            delta: p.delta,
            theta_card: p.theta_card,
        };
        match diagnostics::theorem2_bound(&inputs) {
            Ok(b) => {
                *out = SamqBound { bias: b.bias, variance: b.variance, total: b.total, margin: 0.0 };
                Ok(())
            }
            Err(e) => {
                if let Error::BoundUndefined { margin } = e {
                    out.margin = margin;
                }
                Err(e.into())
            }
        }
    })
}
