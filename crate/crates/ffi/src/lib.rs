//! C ABI for the nlpflow solver.
//!
//! Problems live behind an opaque handle. Every fallible call returns an
//! `NlpfStatus`; on failure a message is available from
//! `nlpf_last_error()` on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};
use nlpflow::expr::parse_problem;
use nlpflow::field::{analyze, penalty_v, Coefficient, SolverConfig};
use nlpflow::integrate::{integrate, IntegratorConfig, Method, MonitorConfig, NlpSystem, RecordEvery, StopReason};
use nlpflow::kkt::{classify, recover_multipliers, KktClass, KktTolerances};
use nlpflow::problem::builtin;
use nlpflow::{Error, NlpProblem};

/// Opaque problem handle.
pub struct NlpfProblem {
    inner: NlpProblem,
}

/// Result codes. `NLPF_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    UnknownProblem = 4,
    ParseError = 5,
    ConstraintQualification = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpfMethod {
    AdaptiveRk45 = 0,
    FixedRk4 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpfStopReason {
    ConvergedEquilibrium = 0,
    ConvergedKkt = 1,
    HorizonReached = 2,
    StepUnderflow = 3,
    StepLimit = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpfKktClass {
    KktPoint = 0,
    FeasibleNonKkt = 1,
    Infeasible = 2,
    CqFailure = 3,
}

/// Solver and integrator settings. Start from
/// `nlpf_solve_options_default()` and override fields.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpfSolveOptions {
    pub method: NlpfMethod,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step, and the step of the fixed method.
    pub h_init: f64,
    pub t_max: f64,
    pub stop_field_tol: f64,
    /// KKT stop tolerance; zero or negative disables the test.
    pub stop_kkt_tol: f64,
    pub max_steps: u64,
    pub sigma: f64,
    pub normalize_sigma: bool,
    /// ψ1 as a constant, used when `psi1_invdet_power` is zero.
    pub psi1: f64,
    /// If positive, ψ1 = det(AA')^-p with this p.
    pub psi1_invdet_power: u32,
    pub psi2: f64,
}

/// Summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlpfSolveResult {
    pub stop_reason: NlpfStopReason,
    pub kkt_class: NlpfKktClass,
    pub steps: u64,
    pub final_t: f64,
    /// Residuals of the limit; NaN when multipliers are unavailable.
    pub stationarity_residual: f64,
    pub complementarity_residual: f64,
    pub mu_negativity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: NlpfStatus, msg: impl Into<String>) -> NlpfStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> NlpfStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::NonSquare { .. } => NlpfStatus::DimensionMismatch,
        Error::UnknownProblem { .. } => NlpfStatus::UnknownProblem,
        Error::Syntax { .. }
        | Error::UnknownIdentifier { .. }
        | Error::VariableOutOfRange { .. }
        | Error::ProblemFile { .. } => NlpfStatus::ParseError,
        Error::ConstraintQualification { .. } => NlpfStatus::ConstraintQualification,
        Error::NonFinite { .. } | Error::NonFiniteStage | Error::DivisionByZero => NlpfStatus::Numerical,
        Error::TooManyEqualities { .. } | Error::InvalidConfig(_) => NlpfStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NlpfStatus>) -> NlpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NlpfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(NlpfStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, NlpfStatus>;
}

impl<T> OrStatus<T> for nlpflow::Result<T> {
    fn or_status(self) -> Result<T, NlpfStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn problem_ref<'a>(p: *const NlpfProblem) -> Result<&'a NlpProblem, NlpfStatus> {
    p.as_ref()
        .map(|p| &p.inner)
        .ok_or_else(|| fail(NlpfStatus::NullPointer, "problem handle is null"))
}

unsafe fn input<'a>(x: *const f64, len: size_t, expected: usize, what: &str) -> Result<&'a [f64], NlpfStatus> {
    if len != expected {
        return Err(fail(
            NlpfStatus::DimensionMismatch,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    if expected == 0 {
        return Ok(&[]);
    }
    if x.is_null() {
        return Err(fail(NlpfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(x, len))
}

unsafe fn output<'a>(x: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], NlpfStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if x.is_null() {
        return Err(fail(NlpfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(x, len))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, NlpfStatus> {
    if s.is_null() {
        return Err(fail(NlpfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(NlpfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn store_handle(out: *mut *mut NlpfProblem, prob: NlpProblem) -> Result<(), NlpfStatus> {
    if out.is_null() {
        return Err(fail(NlpfStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(NlpfProblem { inner: prob }));
    Ok(())
}

fn solver_config(o: &NlpfSolveOptions) -> Result<SolverConfig, NlpfStatus> {
    let positive = |v: f64, name: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(Coefficient::Constant(v))
        } else {
            Err(fail(NlpfStatus::InvalidArgument, format!("{name} must be positive, got {v}")))
        }
    };
    Ok(SolverConfig {
        sigma: positive(o.sigma, "sigma")?,
        psi1: if o.psi1_invdet_power > 0 {
            Coefficient::InverseDetPower(o.psi1_invdet_power)
        } else {
            positive(o.psi1, "psi1")?
        },
        psi2: positive(o.psi2, "psi2")?,
        normalize_sigma: o.normalize_sigma,
        ..SolverConfig::default()
    })
}

fn integrator_config(o: &NlpfSolveOptions) -> Result<IntegratorConfig, NlpfStatus> {
    let d = IntegratorConfig::default();
    let cfg = IntegratorConfig {
        method: match o.method {
            NlpfMethod::AdaptiveRk45 => Method::AdaptiveRk45,
            NlpfMethod::FixedRk4 => Method::FixedRk4,
        },
        rel_tol: o.rel_tol,
        abs_tol: o.abs_tol,
        h_init: o.h_init,
        h_min: d.h_min.min(o.h_init),
        h_max: d.h_max.max(o.h_init),
        t_max: o.t_max,
        stop_field_tol: o.stop_field_tol,
        stop_kkt_tol: (o.stop_kkt_tol > 0.0).then_some(o.stop_kkt_tol),
        record_every: RecordEvery::Steps(1),
        max_steps: usize::try_from(o.max_steps).unwrap_or(usize::MAX),
    };
    cfg.validate().or_status()?;
    Ok(cfg)
}

fn stop_code(s: StopReason) -> NlpfStopReason {
    match s {
        StopReason::ConvergedEquilibrium => NlpfStopReason::ConvergedEquilibrium,
        StopReason::ConvergedKkt => NlpfStopReason::ConvergedKkt,
        StopReason::HorizonReached => NlpfStopReason::HorizonReached,
        StopReason::StepUnderflow => NlpfStopReason::StepUnderflow,
        StopReason::StepLimit => NlpfStopReason::StepLimit,
    }
}

fn class_code(c: KktClass) -> NlpfKktClass {
    match c {
        KktClass::KktPoint => NlpfKktClass::KktPoint,
        KktClass::FeasibleNonKkt => NlpfKktClass::FeasibleNonKkt,
        KktClass::Infeasible => NlpfKktClass::Infeasible,
        KktClass::CqFailure => NlpfKktClass::CqFailure,
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nlpf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nlpf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a built-in problem (`ex71`, `ex72`, `rosen_suzuki`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nlpf_problem_builtin(name: *const c_char, out: *mut *mut NlpfProblem) -> NlpfStatus {
    guard(|| {
        let name = c_str(name, "name")?;
        let prob = builtin(name).or_status()?;
        store_handle(out, prob)
    })
}

/// Parses a problem definition (`n = ...`, `objective = ...`, `eq = ...`,
/// `ineq = ...` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nlpf_problem_from_text(text: *const c_char, out: *mut *mut NlpfProblem) -> NlpfStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let prob = parse_problem(text).or_status()?;
        store_handle(out, prob)
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nlpf_problem_free(p: *mut NlpfProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Writes the number of variables, equalities and inequalities. Any of the
/// output pointers may be NULL.
///
/// # Safety
/// `p` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlpf_problem_dims(
    p: *const NlpfProblem,
    n: *mut size_t,
    m: *mut size_t,
    k: *mut size_t,
) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        for (dst, v) in [(n, prob.n()), (m, prob.m()), (k, prob.k())] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Default options: adaptive Dormand–Prince, normalised σ, ψ1 = det(AA')^-10.
#[no_mangle]
pub extern "C" fn nlpf_solve_options_default() -> NlpfSolveOptions {
    let d = IntegratorConfig::default();
    NlpfSolveOptions {
        method: NlpfMethod::AdaptiveRk45,
        rel_tol: d.rel_tol,
        abs_tol: d.abs_tol,
        h_init: d.h_init,
        t_max: d.t_max,
        stop_field_tol: d.stop_field_tol,
        stop_kkt_tol: d.stop_kkt_tol.unwrap_or(0.0),
        max_steps: d.max_steps as u64,
        sigma: 1.0,
        normalize_sigma: true,
        psi1: 1.0,
        psi1_invdet_power: 10,
        psi2: 1.0,
    }
}

/// Evaluates the solver field at `x` into `f_out` (both of length n).
///
/// # Safety
/// `p` must be a live handle, `opts` readable, `x` readable and `f_out`
/// writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn nlpf_field(
    p: *const NlpfProblem,
    opts: *const NlpfSolveOptions,
    x: *const f64,
    n: size_t,
    f_out: *mut f64,
) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        let opts = opts
            .as_ref()
            .ok_or_else(|| fail(NlpfStatus::NullPointer, "options are null"))?;
        let x = input(x, n, prob.n(), "x")?;
        let out = output(f_out, n, "f_out")?;
        let r = analyze(prob, &solver_config(opts)?, x).or_status()?;
        out.copy_from_slice(&r.f);
        Ok(())
    })
}

/// Writes the penalty `V(x) = ½|h|² + ½|g⁺|²`.
///
/// # Safety
/// `p` must be a live handle, `x` readable for `n` doubles and `v_out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn nlpf_penalty(p: *const NlpfProblem, x: *const f64, n: size_t, v_out: *mut f64) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        let x = input(x, n, prob.n(), "x")?;
        let v = penalty_v(prob, x).or_status()?;
        *output(v_out, 1, "v_out")?.first_mut().unwrap() = v;
        Ok(())
    })
}

/// Integrates from `x0`, writes the final point into `x_out` and a summary
/// into `result`. `opts` may be NULL for the defaults.
///
/// # Safety
/// `p` must be a live handle; `x0` and `x_out` must hold `n` doubles;
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlpf_solve(
    p: *const NlpfProblem,
    opts: *const NlpfSolveOptions,
    x0: *const f64,
    n: size_t,
    x_out: *mut f64,
    result: *mut NlpfSolveResult,
) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        let opts = opts.as_ref().copied().unwrap_or_else(|| nlpf_solve_options_default());
        let x0 = input(x0, n, prob.n(), "x0")?;
        let out = output(x_out, n, "x_out")?;
        let result = result
            .as_mut()
            .ok_or_else(|| fail(NlpfStatus::NullPointer, "result is null"))?;
        let solver = solver_config(&opts)?;
        let ic = integrator_config(&opts)?;
        let traj = integrate(&NlpSystem::new(prob, &solver), x0, &ic, &MonitorConfig::default()).or_status()?;
        let last = traj.last();
        let tols = KktTolerances::limit(ic.stop_kkt_tol.unwrap_or(1e-6));
        let cls = classify(prob, &last.x, &tols).or_status()?;
        out.copy_from_slice(&last.x);
        let (s, c, mneg) = cls.certificate.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN), |c| {
            (c.stationarity_residual, c.complementarity_residual, c.mu_negativity)
        });
        *result = NlpfSolveResult {
            stop_reason: stop_code(traj.stop_reason),
            kkt_class: class_code(cls.class),
            steps: traj.steps as u64,
            final_t: last.t,
            stationarity_residual: s,
            complementarity_residual: c,
            mu_negativity: mneg,
        };
        Ok(())
    })
}

/// Classifies `x` with the default pointwise tolerances.
///
/// # Safety
/// `p` must be a live handle, `x` readable for `n` doubles and `class_out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn nlpf_classify(
    p: *const NlpfProblem,
    x: *const f64,
    n: size_t,
    class_out: *mut NlpfKktClass,
) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        let x = input(x, n, prob.n(), "x")?;
        let class_out = class_out
            .as_mut()
            .ok_or_else(|| fail(NlpfStatus::NullPointer, "class_out is null"))?;
        *class_out = class_code(classify(prob, x, &KktTolerances::default()).or_status()?.class);
        Ok(())
    })
}

/// Recovers the multipliers at `x`: `lambda_out` holds m doubles and
/// `mu_out` k doubles.
///
/// # Safety
/// `p` must be a live handle and the buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn nlpf_multipliers(
    p: *const NlpfProblem,
    x: *const f64,
    n: size_t,
    lambda_out: *mut f64,
    m: size_t,
    mu_out: *mut f64,
    k: size_t,
) -> NlpfStatus {
    guard(|| {
        let prob = problem_ref(p)?;
        let x = input(x, n, prob.n(), "x")?;
        if m != prob.m() || k != prob.k() {
            return Err(fail(
                NlpfStatus::DimensionMismatch,
                format!("buffers sized ({m}, {k}), problem has ({}, {})", prob.m(), prob.k()),
            ));
        }
        let lam = output(lambda_out, m, "lambda_out")?;
        let mu = output(mu_out, k, "mu_out")?;
        let (l, u) = recover_multipliers(prob, x).or_status()?;
        lam.copy_from_slice(&l);
        mu.copy_from_slice(&u);
        Ok(())
    })
}
