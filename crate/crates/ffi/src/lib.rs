//! C interface to the selection solver, the baseline samplers, the
//! time-cost model and the simulator.
//!
//! Conventions: every function returns a [`FedgsStatus`]; outputs go
//! through caller-provided pointers. On failure a message is kept per
//! thread and can be read with [`fedgs_last_error_message`]. Problems are
//! opaque handles released with [`fedgs_problem_free`]; strings returned by
//! the library are released with [`fedgs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedgs::rng::StreamKey;
use fedgs::samplers::{run_sampler, sample_gbp_cs, Sampler, SamplerSettings};
use fedgs::selection::{Initializer, SelectionProblem};
use fedgs::sim::{self, Protocol, SimConfig, SimStatus};
use fedgs::timecost::{self, CostParams};
use fedgs::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DegenerateProblem = 4,
    InstanceTooLarge = 5,
    UnknownSampler = 6,
    MalformedInput = 7,
    InsufficientDevices = 8,
    Runtime = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedgsInitializer {
    Mpinv = 0,
    Zero = 1,
    Random = 2,
}

impl From<FedgsInitializer> for Initializer {
    fn from(i: FedgsInitializer) -> Self {
        match i {
            FedgsInitializer::Mpinv => Initializer::Mpinv,
            FedgsInitializer::Zero => Initializer::Zero,
            FedgsInitializer::Random => Initializer::Random,
        }
    }
}

/// Opaque selection instance.
pub struct FedgsProblem {
    inner: SelectionProblem,
}

/// Summary of one solver or sampler call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FedgsSolveInfo {
    pub objective: f64,
    pub divergence: f64,
    /// Accepted swaps (GBP-CS only; 0 for other samplers).
    pub iterations: u64,
    pub evaluations: u64,
    pub elapsed_ms: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FedgsCostParams {
    pub model_bits: f64,
    pub groups: u64,
    pub selected: u64,
    pub iterations: u64,
    pub b_up_ext: f64,
    pub b_down_ext: f64,
    pub b_up_int: f64,
    pub b_down_int: f64,
    pub gamma_top: f64,
    pub gamma_bs: f64,
    pub gamma_device: f64,
    pub t_comp: f64,
    pub t_select: f64,
}

impl From<&FedgsCostParams> for CostParams {
    fn from(p: &FedgsCostParams) -> Self {
        CostParams {
            model_bits: p.model_bits,
            groups: p.groups,
            selected: p.selected,
            iterations: p.iterations,
            b_up_ext: p.b_up_ext,
            b_down_ext: p.b_down_ext,
            b_up_int: p.b_up_int,
            b_down_int: p.b_down_int,
            gamma_top: p.gamma_top,
            gamma_bs: p.gamma_bs,
            gamma_device: p.gamma_device,
            t_comp: p.t_comp,
            t_select: p.t_select,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FedgsCostReport {
    pub comm_ext: f64,
    pub comm_int: f64,
    pub total_fedgs: f64,
    pub total_fedavg: f64,
    pub condition_lhs: f64,
    pub condition_rhs: f64,
    pub condition_holds: bool,
    pub fedgs_faster: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FedgsCondition {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FedgsStatus {
    match e {
        Error::InvalidConfig(_) | Error::InvalidTopology(_) | Error::InvalidParams(_) => FedgsStatus::InvalidConfig,
        Error::DegenerateProblem(_) | Error::NoFeasiblePair => FedgsStatus::DegenerateProblem,
        Error::InstanceTooLarge { .. } => FedgsStatus::InstanceTooLarge,
        Error::UnknownSampler(_) | Error::UnknownInitializer(_) => FedgsStatus::UnknownSampler,
        Error::MalformedInstance(_) | Error::MalformedManifest(_) | Error::Json(_) => FedgsStatus::MalformedInput,
        Error::LengthMismatch { .. } | Error::ShapeMismatch(_) | Error::InvalidDistribution(_) => {
            FedgsStatus::InvalidArgument
        }
        _ => FedgsStatus::Runtime,
    }
}

struct Fail(FedgsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: FedgsStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<FedgsStatus, Fail>) -> FedgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            set_error("");
            status
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FedgsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(FedgsStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(FedgsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn problem_arg<'a>(p: *const FedgsProblem) -> Result<&'a SelectionProblem, Fail> {
    p.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| Fail(FedgsStatus::NullPointer, "problem is null".into()))
}

unsafe fn store_problem(out: *mut *mut FedgsProblem, p: SelectionProblem) -> Result<FedgsStatus, Fail> {
    if out.is_null() {
        return fail(FedgsStatus::NullPointer, "out is null");
    }
    *out = Box::into_raw(Box::new(FedgsProblem { inner: p }));
    Ok(FedgsStatus::Ok)
}

/// Builds a problem from a row-major `classes x candidates` count matrix
/// and a `classes`-long target.
///
/// # Safety
/// `a` must point to `classes * candidates` values, `y` to `classes`
/// values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_problem_new(
    classes: usize,
    candidates: usize,
    select: usize,
    a: *const i64,
    y: *const f64,
    out: *mut *mut FedgsProblem,
) -> FedgsStatus {
    guard(|| {
        if (a.is_null() && classes * candidates > 0) || (y.is_null() && classes > 0) {
            return fail(FedgsStatus::NullPointer, "a or y is null");
        }
        let a = if classes * candidates == 0 { vec![] } else { std::slice::from_raw_parts(a, classes * candidates).to_vec() };
        let y = if classes == 0 { vec![] } else { std::slice::from_raw_parts(y, classes).to_vec() };
        let p = SelectionProblem::new(classes, candidates, select, a, y)?;
        store_problem(out, p)
    })
}

/// Parses a problem document `{F, alpha, L_sel, A, y, total?}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_problem_from_json(json: *const c_char, out: *mut *mut FedgsProblem) -> FedgsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        store_problem(out, SelectionProblem::from_json(text)?)
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedgs_problem_free(problem: *mut FedgsProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of candidate columns.
///
/// # Safety
/// `problem` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_problem_candidates(problem: *const FedgsProblem, out: *mut usize) -> FedgsStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        if out.is_null() {
            return fail(FedgsStatus::NullPointer, "out is null");
        }
        *out = p.candidates();
        Ok(FedgsStatus::Ok)
    })
}

/// `||A x - y||` for a 0/1 selection of length `len`.
///
/// # Safety
/// `x` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_problem_objective(
    problem: *const FedgsProblem,
    x: *const u8,
    len: usize,
    out: *mut f64,
) -> FedgsStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        if x.is_null() || out.is_null() {
            return fail(FedgsStatus::NullPointer, "x or out is null");
        }
        if len != p.candidates() {
            return fail(FedgsStatus::InvalidArgument, format!("x has {len} entries, expected {}", p.candidates()));
        }
        let sel: Vec<bool> = std::slice::from_raw_parts(x, len).iter().map(|&v| v != 0).collect();
        *out = p.objective(&sel);
        Ok(FedgsStatus::Ok)
    })
}

unsafe fn write_selection(x: &[bool], out: *mut u8, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return fail(FedgsStatus::NullPointer, "x_out is null");
    }
    if len != x.len() {
        return fail(FedgsStatus::InvalidArgument, format!("x_out has {len} entries, expected {}", x.len()));
    }
    for (i, &v) in x.iter().enumerate() {
        *out.add(i) = v as u8;
    }
    Ok(())
}

/// Runs GBP-CS from the given start point. `max_steps == 0` uses the
/// default cap. The selection is written to `x_out` as 0/1 bytes.
///
/// # Safety
/// `x_out` must have room for `x_len` bytes; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn fedgs_solve(
    problem: *const FedgsProblem,
    initializer: FedgsInitializer,
    seed: u64,
    max_steps: usize,
    x_out: *mut u8,
    x_len: usize,
    info: *mut FedgsSolveInfo,
) -> FedgsStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let steps = (max_steps > 0).then_some(max_steps);
        let mut rng = StreamKey::root(seed).rng();
        let (r, trace) = sample_gbp_cs(p, initializer.into(), steps, &mut rng)?;
        write_selection(&r.x, x_out, x_len)?;
        if let Some(info) = info.as_mut() {
            *info = FedgsSolveInfo {
                objective: r.objective,
                divergence: p.divergence_of(r.objective),
                iterations: trace.steps.len() as u64,
                evaluations: r.evaluations,
                elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
            };
        }
        Ok(FedgsStatus::Ok)
    })
}

/// Runs a sampler by name: `gbp-cs`, `gbp-cs:zero`, `gbp-cs:random`,
/// `random`, `mc`, `brute` or `ga`, with default settings.
///
/// # Safety
/// `sampler` must be a NUL-terminated string; see [`fedgs_solve`].
#[no_mangle]
pub unsafe extern "C" fn fedgs_sample(
    problem: *const FedgsProblem,
    sampler: *const c_char,
    seed: u64,
    x_out: *mut u8,
    x_len: usize,
    info: *mut FedgsSolveInfo,
) -> FedgsStatus {
    guard(|| {
        let p = problem_arg(problem)?;
        let sampler: Sampler = str_arg(sampler, "sampler")?.parse()?;
        let mut rng = StreamKey::root(seed).rng();
        let r = run_sampler(sampler, p, &SamplerSettings::default(), &mut rng)?;
        write_selection(&r.x, x_out, x_len)?;
        if let Some(info) = info.as_mut() {
            *info = FedgsSolveInfo {
                objective: r.objective,
                divergence: p.divergence_of(r.objective),
                iterations: 0,
                evaluations: r.evaluations,
                elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
            };
        }
        Ok(FedgsStatus::Ok)
    })
}

/// Fills `out` with every delay of the cost model.
///
/// # Safety
/// `params` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_cost_report(params: *const FedgsCostParams, out: *mut FedgsCostReport) -> FedgsStatus {
    guard(|| {
        let (Some(params), false) = (params.as_ref(), out.is_null()) else {
            return fail(FedgsStatus::NullPointer, "params or out is null");
        };
        let r = timecost::report(&CostParams::from(params))?;
        *out = FedgsCostReport {
            comm_ext: r.comm_ext,
            comm_int: r.comm_int,
            total_fedgs: r.fedgs,
            total_fedavg: r.fedavg,
            condition_lhs: r.condition_lhs,
            condition_rhs: r.condition_rhs,
            condition_holds: r.condition_holds,
            fedgs_faster: r.fedgs_faster,
        };
        Ok(FedgsStatus::Ok)
    })
}

/// `T L / (M (L - 1)) < B_int / B_ext`.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_efficiency_condition(
    iterations: u64,
    groups: u64,
    selected: u64,
    b_int: f64,
    b_ext: f64,
    out: *mut FedgsCondition,
) -> FedgsStatus {
    guard(|| {
        if out.is_null() {
            return fail(FedgsStatus::NullPointer, "out is null");
        }
        let c = timecost::efficiency_condition(iterations, groups, selected, b_int, b_ext)?;
        *out = FedgsCondition {
            lhs: c.lhs,
            rhs: c.rhs,
            holds: c.holds,
        };
        Ok(FedgsStatus::Ok)
    })
}

/// Runs a simulation described by a JSON config. `protocol` is `fedgs` or
/// `fedavg`. On `Ok` or `InsufficientDevices`, `*metrics_out` receives the
/// per-round metrics as JSON lines; free it with [`fedgs_string_free`].
///
/// # Safety
/// String arguments NUL-terminated; `metrics_out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedgs_simulate_json(
    config_json: *const c_char,
    protocol: *const c_char,
    workers: usize,
    metrics_out: *mut *mut c_char,
) -> FedgsStatus {
    guard(|| {
        if metrics_out.is_null() {
            return fail(FedgsStatus::NullPointer, "metrics_out is null");
        }
        *metrics_out = ptr::null_mut();
        let config: SimConfig = serde_json::from_str(str_arg(config_json, "config_json")?)
            .map_err(|e| Fail(FedgsStatus::InvalidConfig, e.to_string()))?;
        let protocol: Protocol = str_arg(protocol, "protocol")?.parse()?;
        let outcome = sim::run(&config, protocol, workers.max(1))?;
        let mut buf = Vec::new();
        sim::write_metrics_jsonl(&outcome.metrics, &mut buf)?;
        let text = CString::new(buf).or_else(|_| fail(FedgsStatus::Runtime, "metrics contain NUL"))?;
        *metrics_out = text.into_raw();
        match outcome.status {
            SimStatus::Completed => Ok(FedgsStatus::Ok),
            s => fail(FedgsStatus::InsufficientDevices, serde_json::to_string(&s).unwrap_or_default()),
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedgs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failing call on this thread, or an empty string.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn fedgs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedgs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
