//! Explicit Runge–Kutta integration of the solver field, trajectory
//! recording and runtime monitors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{analyze, planar_demo_field, SolverConfig};
use crate::kernels::norm;
use crate::kkt::{classify, KktClass, KktTolerances};
use crate::problem::{NlpProblem, DEFAULT_FEAS_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4) with PI step control.
    AdaptiveRk45,
    /// Classical RK4 with step `h_init`.
    FixedRk4,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive_rk45" | "rk45" | "dopri5" => Ok(Method::AdaptiveRk45),
            "fixed_rk4" | "rk4" => Ok(Method::FixedRk4),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected adaptive_rk45 or fixed_rk4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordEvery {
    /// Every n-th accepted step.
    Steps(usize),
    /// Whenever at least this much time has passed since the last record.
    Interval(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub t_max: f64,
    /// Stop when `|f(x)| <= stop_field_tol * (1 + |x|)`.
    pub stop_field_tol: f64,
    /// Residual tolerance of the KKT stop test; `None` disables it.
    pub stop_kkt_tol: Option<f64>,
    pub record_every: RecordEvery,
    /// Hard cap on accepted steps.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveRk45,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-14,
            h_max: 10.0,
            t_max: 1e3,
            stop_field_tol: 1e-8,
            stop_kkt_tol: Some(1e-6),
            record_every: RecordEvery::Steps(1),
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.stop_field_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if let Some(t) = self.stop_kkt_tol {
            if !(t > 0.0) {
                return bad("stop_kkt_tol must be positive".into());
            }
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad(format!(
                "need 0 < h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            ));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max must be positive and finite, got {}", self.t_max));
        }
        match self.record_every {
            RecordEvery::Steps(0) => return bad("record_every must be at least 1 step".into()),
            RecordEvery::Interval(dt) if !(dt >= 0.0) => {
                return bad("record interval must be non-negative".into())
            }
            _ => {}
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }
}

/// Scalar observables at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub v: f64,
    pub theta: f64,
    /// Largest constraint violation, `max(max|h_i|, max g_j⁺)`.
    pub violation: f64,
    pub feasible: bool,
}

/// An autonomous ODE `ẋ = f(x)` with observables.
pub trait System: Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn observe(&self, x: &[f64]) -> Result<Observation>;

    /// Whether `x` passes a KKT certificate at [`KktTolerances::limit`]. Systems without constraints never report it.
    fn kkt_converged(&self, _x: &[f64], _tol: f64) -> Result<bool> {
        Ok(false)
    }
}

/// The solver field of an NLP.
pub struct NlpSystem<'a> {
    pub prob: &'a NlpProblem,
    pub cfg: &'a SolverConfig,
    /// Feasibility band used for the recorded flag and the KKT test.
    pub feas_eps: f64,
}

impl<'a> NlpSystem<'a> {
    pub fn new(prob: &'a NlpProblem, cfg: &'a SolverConfig) -> Self {
        Self {
            prob,
            cfg,
            feas_eps: DEFAULT_FEAS_EPS,
        }
    }
}

impl System for NlpSystem<'_> {
    fn dim(&self) -> usize {
        self.prob.n()
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(analyze(self.prob, self.cfg, x)?.f)
    }

    fn observe(&self, x: &[f64]) -> Result<Observation> {
        let ev = self.prob.evaluate(x)?;
        let (theta, _) = self.prob.objective_at(x)?;
        let hmax = ev.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gmax = ev.g.iter().fold(0.0f64, |m, &v| m.max(v));
        let v = 0.5 * ev.h.iter().map(|v| v * v).sum::<f64>()
            + 0.5 * ev.g.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>();
        Ok(Observation {
            v,
            theta,
            violation: hmax.max(gmax),
            feasible: ev.is_feasible(self.feas_eps, self.feas_eps),
        })
    }

    fn kkt_converged(&self, x: &[f64], tol: f64) -> Result<bool> {
        let tols = KktTolerances {
            eps_h: self.feas_eps,
            eps_g: self.feas_eps,
            ..KktTolerances::limit(tol)
        };
        Ok(classify(self.prob, x, &tols)?.class == KktClass::KktPoint)
    }
}

/// The planar demonstration system with `V = ½ max(0, |x|² − 1)²` and
/// `θ = x1 + x2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlanarSystem;

impl System for PlanarSystem {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = planar_point(x)?;
        Ok(planar_demo_field(x).f.to_vec())
    }

    fn observe(&self, x: &[f64]) -> Result<Observation> {
        let p = planar_demo_field(planar_point(x)?);
        let violation = (x[0] * x[0] + x[1] * x[1] - 1.0).max(0.0);
        Ok(Observation {
            v: p.v,
            theta: p.theta,
            violation,
            feasible: violation <= DEFAULT_FEAS_EPS,
        })
    }
}

fn planar_point(x: &[f64]) -> Result<[f64; 2]> {
    match x {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        }),
    }
}

/// A system given by closures, mostly for tests and custom fields.
pub struct FnSystem<F, O> {
    pub dim: usize,
    pub field: F,
    /// Returns `V` at `x`; θ is reported as zero and every state as feasible.
    pub observe: O,
}

impl<F, O> System for FnSystem<F, O>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    O: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.field)(x))
    }

    fn observe(&self, x: &[f64]) -> Result<Observation> {
        Ok(Observation {
            v: (self.observe)(x),
            theta: 0.0,
            violation: 0.0,
            feasible: true,
        })
    }
}

fn checked(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFiniteStage)
    }
}

fn axpy(x: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    (0..x.len())
        .map(|i| x[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
        .collect()
}

/// One classical RK4 step.
pub fn rk4_step<S: System + ?Sized>(sys: &S, x: &[f64], h: f64, k1: Option<&[f64]>) -> Result<Vec<f64>> {
    let k1 = match k1 {
        Some(k) => k.to_vec(),
        None => checked(sys.rhs(x)?)?,
    };
    let k2 = checked(sys.rhs(&axpy(x, h, &[(0.5, &k1)]))?)?;
    let k3 = checked(sys.rhs(&axpy(x, h, &[(0.5, &k2)]))?)?;
    let k4 = checked(sys.rhs(&axpy(x, h, &[(1.0, &k3)]))?)?;
    checked(axpy(
        x,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    ))
}

/// Result of one Dormand–Prince step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dp45Step {
    /// Fifth-order solution.
    pub x_next: Vec<f64>,
    /// Difference between the fifth- and fourth-order solutions.
    pub error: Vec<f64>,
    /// `f(x_next)`, reusable as the next first stage.
    pub f_next: Vec<f64>,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One Dormand–Prince 5(4) step. `k1` is `f(x)` if already known.
pub fn dp45_step<S: System + ?Sized>(sys: &S, x: &[f64], h: f64, k1: Option<&[f64]>) -> Result<Dp45Step> {
    let k1 = match k1 {
        Some(k) => k.to_vec(),
        None => checked(sys.rhs(x)?)?,
    };
    let k2 = checked(sys.rhs(&axpy(x, h, &[(A21, &k1)]))?)?;
    let k3 = checked(sys.rhs(&axpy(x, h, &[(A31, &k1), (A32, &k2)]))?)?;
    let k4 = checked(sys.rhs(&axpy(x, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?)?;
    let k5 = checked(sys.rhs(&axpy(
        x,
        h,
        &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
    ))?)?;
    let k6 = checked(sys.rhs(&axpy(
        x,
        h,
        &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    ))?)?;
    let x_next = checked(axpy(
        x,
        h,
        &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    ))?;
    let k7 = checked(sys.rhs(&x_next)?)?;
    let error = (0..x.len())
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Ok(Dp45Step {
        x_next,
        error,
        f_next: k7,
    })
}

/// One step of the chosen method: `(x_next, error estimate)`; the estimate
/// is absent for RK4.
pub fn step<S: System + ?Sized>(
    sys: &S,
    method: Method,
    x: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {h}")));
    }
    match method {
        Method::FixedRk4 => Ok((rk4_step(sys, x, h, None)?, None)),
        Method::AdaptiveRk45 => {
            let s = dp45_step(sys, x, h, None)?;
            Ok((s.x_next, Some(s.error)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ConvergedEquilibrium,
    ConvergedKkt,
    HorizonReached,
    StepUnderflow,
    /// The accepted-step cap was hit before any other condition.
    StepLimit,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        matches!(self, StopReason::ConvergedEquilibrium | StopReason::ConvergedKkt)
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::ConvergedEquilibrium => "converged_equilibrium",
            StopReason::ConvergedKkt => "converged_kkt",
            StopReason::HorizonReached => "horizon_reached",
            StopReason::StepUnderflow => "step_underflow",
            StopReason::StepLimit => "step_limit",
        })
    }
}

/// One recorded state; every quantity is evaluated at `x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub theta: f64,
    pub fnorm: f64,
    pub violation: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonitorViolation {
    /// `V` grew between consecutive records by more than the tolerance.
    PenaltyIncrease { index: usize, t: f64, from: f64, to: f64 },
    /// A record left the feasibility band after an earlier record was in it.
    FeasibilityBreach { index: usize, t: f64, violation: f64 },
    /// `|x|` exceeded the ceiling.
    Unbounded { index: usize, t: f64, norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub rejected: usize,
    pub monitor_violations: Vec<MonitorViolation>,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory has at least one record")
    }

    pub fn final_x(&self) -> &[f64] {
        &self.last().x
    }
}

/// Thresholds for [`monitors`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorConfig {
    /// Allowed relative growth of `V` between records, `tol * (1 + V)`.
    pub v_tol: f64,
    /// Feasibility band on the constraint violation.
    pub band: f64,
    pub ceiling: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            v_tol: 1e-8,
            band: 1e-6,
            ceiling: 1e6,
        }
    }
}

fn make_record<S: System + ?Sized>(sys: &S, t: f64, x: &[f64], f: &[f64]) -> Result<Record> {
    let o = sys.observe(x)?;
    Ok(Record {
        t,
        x: x.to_vec(),
        v: o.v,
        theta: o.theta,
        fnorm: norm(f),
        violation: o.violation,
        feasible: o.feasible,
    })
}

fn stop_check<S: System + ?Sized>(
    sys: &S,
    cfg: &IntegratorConfig,
    x: &[f64],
    f: &[f64],
) -> Result<Option<StopReason>> {
    if norm(f) <= cfg.stop_field_tol * (1.0 + norm(x)) {
        return Ok(Some(StopReason::ConvergedEquilibrium));
    }
    if let Some(tol) = cfg.stop_kkt_tol {
        if sys.kkt_converged(x, tol)? {
            return Ok(Some(StopReason::ConvergedKkt));
        }
    }
    Ok(None)
}

fn error_norm(err: &[f64], x: &[f64], x_next: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = (0..err.len())
        .map(|i| {
            let sc = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(x_next[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Step size and end time of a step from `t`, landing exactly on `t_max`
/// when the remainder is within rounding of `h`.
fn clip_step(t: f64, h: f64, t_max: f64) -> (f64, f64) {
    let rest = t_max - t;
    if h >= rest * (1.0 - 1e-9) {
        (rest, t_max)
    } else {
        (h, t + h)
    }
}

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;

/// Integrates `ẋ = f(x)` from `x0` until a stop condition; monitor
/// violations are computed with `monitor_cfg` and attached.
pub fn integrate<S: System + ?Sized>(
    sys: &S,
    x0: &[f64],
    cfg: &IntegratorConfig,
    monitor_cfg: &MonitorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial point must be finite".into()));
    }

    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut fx = checked(sys.rhs(&x)?)?;
    let mut records = vec![make_record(sys, t, &x, &fx)?];
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut h = cfg.h_init;
    let mut err_prev = 1.0f64;
    let mut last_record_t = 0.0;
    let mut since_record = 0usize;

    let mut reason = stop_check(sys, cfg, &x, &fx)?;
    while reason.is_none() {
        if t >= cfg.t_max {
            reason = Some(StopReason::HorizonReached);
            break;
        }
        if steps >= cfg.max_steps {
            reason = Some(StopReason::StepLimit);
            break;
        }
        match cfg.method {
            Method::FixedRk4 => {
                let (hs, t_next) = clip_step(t, h, cfg.t_max);
                x = rk4_step(sys, &x, hs, Some(&fx))?;
                t = t_next;
                fx = checked(sys.rhs(&x)?)?;
            }
            Method::AdaptiveRk45 => loop {
                if h < cfg.h_min {
                    reason = Some(StopReason::StepUnderflow);
                    break;
                }
                let (hs, t_next) = clip_step(t, h, cfg.t_max);
                let trial = dp45_step(sys, &x, hs, Some(&fx));
                let (s, err) = match trial {
                    Ok(s) => {
                        let e = error_norm(&s.error, &x, &s.x_next, cfg);
                        (Some(s), e)
                    }
                    Err(Error::NonFiniteStage) | Err(Error::NonFinite { .. }) => (None, f64::INFINITY),
                    Err(e) => return Err(e),
                };
                match s {
                    Some(s) if err <= 1.0 => {
                        let fac = if err == 0.0 {
                            FAC_MAX
                        } else {
                            SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
                        };
                        h = (hs * fac.clamp(FAC_MIN, FAC_MAX)).min(cfg.h_max);
                        err_prev = err.max(1e-4);
                        x = s.x_next;
                        fx = s.f_next;
                        t = t_next;
                        break;
                    }
                    _ => {
                        rejected += 1;
                        let fac = if err.is_finite() {
                            (SAFETY * err.powf(-1.0 / 5.0)).clamp(FAC_MIN, 1.0)
                        } else {
                            FAC_MIN
                        };
                        h = hs * fac;
                    }
                }
            },
        }
        if reason.is_some() {
            break;
        }
        steps += 1;
        since_record += 1;

        reason = stop_check(sys, cfg, &x, &fx)?;
        if reason.is_none() && t >= cfg.t_max {
            reason = Some(StopReason::HorizonReached);
        }
        let due = match cfg.record_every {
            RecordEvery::Steps(k) => since_record >= k,
            RecordEvery::Interval(dt) => t - last_record_t >= dt,
        };
        if due || reason.is_some() {
            records.push(make_record(sys, t, &x, &fx)?);
            last_record_t = t;
            since_record = 0;
        }
    }
    if since_record > 0 {
        records.push(make_record(sys, t, &x, &fx)?);
    }

    let mut traj = Trajectory {
        records,
        stop_reason: reason.expect("loop exits with a reason"),
        steps,
        rejected,
        monitor_violations: Vec::new(),
    };
    traj.monitor_violations = monitors(&traj, monitor_cfg);
    Ok(traj)
}

/// Flags penalty growth, feasibility breaches and unboundedness.
pub fn monitors(traj: &Trajectory, cfg: &MonitorConfig) -> Vec<MonitorViolation> {
    let mut out = Vec::new();
    let vs: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.v)).collect();
    for (index, from, to) in monotone_violations(&vs, cfg.v_tol) {
        out.push(MonitorViolation::PenaltyIncrease {
            index,
            t: traj.records[index].t,
            from,
            to,
        });
    }
    let mut was_feasible = false;
    for (i, r) in traj.records.iter().enumerate() {
        let inside = r.violation <= cfg.band;
        if was_feasible && !inside {
            out.push(MonitorViolation::FeasibilityBreach {
                index: i,
                t: r.t,
                violation: r.violation,
            });
        }
        was_feasible |= inside;
        let nx = norm(&r.x);
        if !(nx <= cfg.ceiling) {
            out.push(MonitorViolation::Unbounded {
                index: i,
                t: r.t,
                norm: nx,
            });
        }
    }
    out
}

/// Indices where a sampled quantity grows by more than `tol * (1 + |prev|)`
/// between consecutive samples, as `(index, previous, current)`.
pub fn monotone_violations(samples: &[(f64, f64)], tol: f64) -> Vec<(usize, f64, f64)> {
    samples
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].1 - w[0].1 > tol * (1.0 + w[0].1.abs()))
        .map(|(i, w)| (i + 1, w[0].1, w[1].1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> FnSystem<impl Fn(&[f64]) -> Vec<f64> + Sync, impl Fn(&[f64]) -> f64 + Sync> {
        FnSystem {
            dim: 1,
            field: |x: &[f64]| vec![-x[0]],
            observe: |x: &[f64]| 0.5 * x[0] * x[0],
        }
    }

    fn run_to(t_max: f64, method: Method, h: f64) -> Trajectory {
        let cfg = IntegratorConfig {
            method,
            h_init: h,
            h_max: h.max(10.0),
            t_max,
            stop_field_tol: 1e-300,
            stop_kkt_tol: None,
            ..IntegratorConfig::default()
        };
        integrate(&decay(), &[1.0], &cfg, &MonitorConfig::default()).unwrap()
    }

    #[test]
    fn rk4_decay_step() {
        let (x, e) = step(&decay(), Method::FixedRk4, &[1.0], 0.1).unwrap();
        assert!(e.is_none());
        assert!((x[0] - 0.9048375).abs() <= 1e-7);
        let taylor = 1.0 - 0.1 + 0.01 / 2.0 - 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((x[0] - taylor).abs() <= 1e-15);
    }

    #[test]
    fn zero_field_is_fixed() {
        let sys = FnSystem {
            dim: 3,
            field: |_: &[f64]| vec![0.0; 3],
            observe: |_: &[f64]| 0.0,
        };
        let x = [0.3, -1.25, 7.0];
        for m in [Method::FixedRk4, Method::AdaptiveRk45] {
            assert_eq!(step(&sys, m, &x, 0.5).unwrap().0, x.to_vec());
        }
        let err = step(&sys, Method::AdaptiveRk45, &x, 0.5).unwrap().1.unwrap();
        assert!(err.iter().all(|&e| e == 0.0));
        assert!(step(&sys, Method::FixedRk4, &x, 0.0).is_err());
    }

    #[test]
    fn adaptive_reaches_exact_solution() {
        let tr = run_to(1.0, Method::AdaptiveRk45, 1e-3);
        assert_eq!(tr.stop_reason, StopReason::HorizonReached);
        let last = tr.last();
        assert_eq!(last.t, 1.0);
        assert!((last.x[0] - (-1.0f64).exp()).abs() <= 1e-7);
        assert!(tr.records.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let e1 = (run_to(1.0, Method::FixedRk4, 0.1).last().x[0] - exact).abs();
        let e2 = (run_to(1.0, Method::FixedRk4, 0.05).last().x[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn deterministic_runs() {
        let a = run_to(3.0, Method::AdaptiveRk45, 1e-3);
        let b = run_to(3.0, Method::AdaptiveRk45, 1e-3);
        assert_eq!(a, b);
    }

    #[test]
    fn growth_is_flagged() {
        let sys = FnSystem {
            dim: 1,
            field: |x: &[f64]| vec![x[0]],
            observe: |x: &[f64]| 0.5 * x[0] * x[0],
        };
        let cfg = IntegratorConfig {
            t_max: 1.0,
            stop_kkt_tol: None,
            ..IntegratorConfig::default()
        };
        let tr = integrate(&sys, &[1.0], &cfg, &MonitorConfig::default()).unwrap();
        assert!(tr
            .monitor_violations
            .iter()
            .any(|v| matches!(v, MonitorViolation::PenaltyIncrease { .. })));
        let calm = run_to(1.0, Method::AdaptiveRk45, 1e-3);
        assert!(calm.monitor_violations.is_empty());
    }

    #[test]
    fn equilibrium_stops_immediately() {
        let sys = FnSystem {
            dim: 1,
            field: |x: &[f64]| vec![-x[0]],
            observe: |_: &[f64]| 0.0,
        };
        let tr = integrate(&sys, &[0.0], &IntegratorConfig::default(), &MonitorConfig::default()).unwrap();
        assert_eq!(tr.stop_reason, StopReason::ConvergedEquilibrium);
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.steps, 0);
    }

    #[test]
    fn underflow_is_a_stop_reason() {
        let sys = FnSystem {
            dim: 1,
            field: |x: &[f64]| vec![if x[0] > 1.0 { f64::NAN } else { 1.0 }],
            observe: |_: &[f64]| 0.0,
        };
        let cfg = IntegratorConfig {
            h_min: 1e-6,
            ..IntegratorConfig::default()
        };
        let tr = integrate(&sys, &[0.0], &cfg, &MonitorConfig::default()).unwrap();
        assert_eq!(tr.stop_reason, StopReason::StepUnderflow);
        assert!(tr.final_x()[0] <= 1.0);
    }

    #[test]
    fn record_interval_thins_output() {
        let cfg = IntegratorConfig {
            method: Method::FixedRk4,
            h_init: 0.01,
            t_max: 1.0,
            stop_kkt_tol: None,
            record_every: RecordEvery::Steps(10),
            ..IntegratorConfig::default()
        };
        let tr = integrate(&decay(), &[1.0], &cfg, &MonitorConfig::default()).unwrap();
        assert_eq!(tr.steps, 100);
        assert_eq!(tr.records.len(), 11);
    }

    #[test]
    fn invalid_configs() {
        let mut c = IntegratorConfig::default();
        c.h_min = 1.0;
        assert!(c.validate().is_err());
        let c = IntegratorConfig {
            record_every: RecordEvery::Steps(0),
            ..IntegratorConfig::default()
        };
        assert!(c.validate().is_err());
        assert!("rk4".parse::<Method>().is_ok());
        assert!("euler".parse::<Method>().is_err());
    }

    #[test]
    fn monotone_helper() {
        let s = [(0.0, 3.0), (1.0, 2.0), (2.0, 2.5), (3.0, 1.0)];
        assert_eq!(monotone_violations(&s, 1e-9), vec![(2, 2.0, 2.5)]);
        assert!(monotone_violations(&s, 1.0).is_empty());
    }
}
