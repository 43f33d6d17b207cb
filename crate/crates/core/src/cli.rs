//! Command-line front end: solve, sweep, check and demo.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::expr::parse_problem;
use crate::field::{analyze, planar_demo_field, Coefficient, SolverConfig, PLANAR_ATTRACTOR};
use crate::integrate::{
    integrate, IntegratorConfig, Method, MonitorConfig, MonitorViolation, NlpSystem, PlanarSystem,
    RecordEvery, StopReason, Trajectory,
};
use crate::kernels::{dot, norm, TOL_PD};
use crate::kkt::{classify, KktCertificate, KktClass, KktTolerances};
use crate::problem::{builtin, NlpProblem};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NLPFLOW_OUT_DIR";

/// Name of the planar demonstration system, accepted by `sweep`.
pub const PLANAR_NAME: &str = "planar";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("serialising report: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "nlpflow",
    version,
    about = "Solve constrained nonlinear programs by integrating an ODE whose equilibria are KKT points"
)]
pub struct Cli {
    /// Output directory
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate from one initial point and certify the limit
    Solve(SolveArgs),
    /// Integrate from every point of a grid
    Sweep(SweepArgs),
    /// Monte-Carlo diagnostics for the solver's standing assumptions
    Check(CheckArgs),
    /// Planar demonstration: identity checks and an attractor sweep
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Built-in problem (ex71, ex72, rosen_suzuki)
    #[arg(long, required_unless_present = "problem_file", conflicts_with = "problem_file")]
    pub problem: Option<String>,
    /// Problem definition file
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FieldArgs {
    /// σ, a positive constant
    #[arg(long, default_value = "1")]
    pub sigma: String,
    /// Divide σ by 1 + |raw field| (on/off)
    #[arg(long, default_value = "on", value_parser = parse_switch, action = clap::ArgAction::Set)]
    pub sigma_norm: bool,
    /// ψ1: a positive constant or invdet<p> for det(AA')^-p
    #[arg(long, default_value = "invdet10")]
    pub psi1: String,
    /// ψ2: a positive constant or invdet<p>
    #[arg(long, default_value = "1")]
    pub psi2: String,
}

#[derive(Debug, Clone, Args)]
pub struct IntegratorArgs {
    /// Integration horizon
    #[arg(long, default_value_t = 1e3)]
    pub tmax: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub atol: f64,
    /// adaptive_rk45 or fixed_rk4
    #[arg(long, default_value = "adaptive_rk45")]
    pub method: String,
    /// Initial (or fixed) step size
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub max_steps: usize,
    /// Record every n-th accepted step
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Initial point, comma separated
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Built-in problem (ex71, ex72, rosen_suzuki, planar)
    #[arg(long, required_unless_present = "problem_file", conflicts_with = "problem_file")]
    pub problem: Option<String>,
    #[arg(long)]
    pub problem_file: Option<PathBuf>,
    /// Axis spec lo:hi:count; give one per coordinate or one for all
    #[arg(long, required = true, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    /// Largest number of grid points accepted
    #[arg(long, default_value_t = 10_000)]
    pub max_points: usize,
    /// Run grid points one after another
    #[arg(long)]
    pub serial: bool,
    /// Also write one trajectory CSV per grid point
    #[arg(long)]
    pub write_trajectories: bool,
    #[command(flatten)]
    pub field: FieldArgs,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling interval lo:hi; one per coordinate or one for all
    #[arg(long = "box", default_value = "-3:3", allow_hyphen_values = true)]
    pub bounds: Vec<String>,
    /// Threshold for "critical point of V" and "V positive"
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Constraint violation defining the near-feasible band
    #[arg(long, default_value_t = 0.1)]
    pub band: f64,
    #[command(flatten)]
    pub field: FieldArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random points for the identity checks
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Grid points per axis of the attractor sweep
    #[arg(long, default_value_t = 9)]
    pub grid_count: usize,
}

fn parse_switch(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on or off, got `{s}`")),
    }
}

/// Parses a comma-separated point.
pub fn parse_point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("bad coordinate `{t}` in `{text}`")))
        })
        .collect()
}

/// One grid axis, `count` evenly spaced values from `lo` to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let bad = || usage(format!("grid axis must be lo:hi:count, got `{text}`"));
        let [lo, hi, count] = parts[..] else {
            return Err(bad());
        };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let count: usize = count.parse().map_err(|_| bad())?;
        if count == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(bad());
        }
        Ok(Self { lo, hi, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

/// Cartesian product of the axes, first coordinate varying slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for ax in axes {
        let vals = ax.values();
        pts = pts
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn expand<T: Clone>(items: Vec<T>, n: usize, what: &str) -> Result<Vec<T>, CliError> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); n]),
        len if len == n => Ok(items),
        len => Err(usage(format!("expected 1 or {n} {what} specs, got {len}"))),
    }
}

fn parse_interval(text: &str) -> Result<(f64, f64), CliError> {
    let bad = || usage(format!("interval must be lo:hi, got `{text}`"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Loads a built-in problem or a problem file.
pub fn load_problem(name: Option<&str>, file: Option<&Path>) -> Result<NlpProblem, CliError> {
    match (name, file) {
        (Some(name), None) => builtin(name).map_err(|e| usage(e.to_string())),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            parse_problem(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        _ => Err(usage("give exactly one of --problem or --problem-file")),
    }
}

impl FieldArgs {
    pub fn to_config(&self) -> Result<SolverConfig, CliError> {
        let coef = |flag: &str, s: &str| {
            Coefficient::parse(s).map_err(|e| usage(format!("--{flag}: {e}")))
        };
        let sigma = coef("sigma", &self.sigma)?;
        if !matches!(sigma, Coefficient::Constant(_)) {
            return Err(usage("--sigma must be a positive constant"));
        }
        let cfg = SolverConfig {
            sigma,
            psi1: coef("psi1", &self.psi1)?,
            psi2: coef("psi2", &self.psi2)?,
            normalize_sigma: self.sigma_norm,
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl IntegratorArgs {
    pub fn to_config(&self) -> Result<IntegratorConfig, CliError> {
        let method: Method = self.method.parse().map_err(|e: Error| usage(e.to_string()))?;
        let d = IntegratorConfig::default();
        let cfg = IntegratorConfig {
            method,
            rel_tol: self.rtol,
            abs_tol: self.atol,
            h_init: self.h,
            h_min: d.h_min.min(self.h),
            h_max: d.h_max.max(self.h),
            t_max: self.tmax,
            max_steps: self.max_steps,
            record_every: RecordEvery::Steps(self.record_every),
            ..d
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Text form of the solver coefficients, for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub sigma: String,
    pub sigma_norm: bool,
    pub psi1: String,
    pub psi2: String,
}

impl From<&SolverConfig> for SolverSummary {
    fn from(c: &SolverConfig) -> Self {
        Self {
            sigma: c.sigma.describe(),
            sigma_norm: c.normalize_sigma,
            psi1: c.psi1.describe(),
            psi2: c.psi2.describe(),
        }
    }
}

/// Outcome of one `solve` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub x0: Vec<f64>,
    pub stop_reason: StopReason,
    pub final_t: f64,
    pub final_x: Vec<f64>,
    pub classification: KktClass,
    pub certificate: Option<KktCertificate>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub records: usize,
    pub wall_time_s: f64,
    pub monitor_violations: Vec<MonitorViolation>,
    pub solver: SolverSummary,
    pub integrator: IntegratorConfig,
    pub exit_code: u8,
}

/// Exit code of a finished run: 0 for a certified KKT limit, 3 when the
/// constraint qualification fails there, 1 otherwise.
pub fn exit_code_for(stop: StopReason, class: KktClass) -> u8 {
    match class {
        KktClass::CqFailure => 3,
        KktClass::KktPoint if stop.is_converged() => 0,
        _ => 1,
    }
}

/// Tolerances used to certify the end point of a run.
pub fn limit_tolerances(integrator: &IntegratorConfig) -> KktTolerances {
    KktTolerances::limit(integrator.stop_kkt_tol.unwrap_or(1e-6))
}

/// Integrates one NLP run and classifies its limit.
pub fn solve(
    prob: &NlpProblem,
    solver: &SolverConfig,
    integrator: &IntegratorConfig,
    x0: &[f64],
) -> Result<(Trajectory, RunReport), Error> {
    let start = Instant::now();
    let sys = NlpSystem::new(prob, solver);
    let traj = integrate(&sys, x0, integrator, &MonitorConfig::default())?;
    let last = traj.last();
    let cls = classify(prob, &last.x, &limit_tolerances(integrator))?;
    let report = RunReport {
        problem: prob.name().to_string(),
        n: prob.n(),
        m: prob.m(),
        k: prob.k(),
        x0: x0.to_vec(),
        stop_reason: traj.stop_reason,
        final_t: last.t,
        final_x: last.x.clone(),
        classification: cls.class,
        certificate: cls.certificate,
        steps: traj.steps,
        rejected_steps: traj.rejected,
        records: traj.records.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
        monitor_violations: traj.monitor_violations.clone(),
        solver: solver.into(),
        integrator: integrator.clone(),
        exit_code: exit_code_for(traj.stop_reason, cls.class),
    };
    Ok((traj, report))
}

/// Writes `t,x1..xn,V,theta,fnorm,feasible`, numbers with 17 significant
/// digits and the flag as 0/1.
pub fn write_trajectory_csv<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.records.first().map_or(0, |r| r.x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["V", "theta", "fnorm", "feasible"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in &traj.records {
        let mut row = vec![num(r.t)];
        row.extend(r.x.iter().map(|&v| num(v)));
        row.extend([num(r.v), num(r.theta), num(r.fnorm)]);
        row.push(if r.feasible { "1" } else { "0" }.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// What a sweep integrates.
pub enum SweepTarget {
    Nlp(NlpProblem, SolverConfig),
    Planar,
}

impl SweepTarget {
    pub fn name(&self) -> &str {
        match self {
            SweepTarget::Nlp(p, _) => p.name(),
            SweepTarget::Planar => PLANAR_NAME,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SweepTarget::Nlp(p, _) => p.n(),
            SweepTarget::Planar => 2,
        }
    }

    fn targets(&self) -> Vec<Vec<f64>> {
        match self {
            SweepTarget::Nlp(p, _) => p.known_kkt().to_vec(),
            SweepTarget::Planar => vec![PLANAR_ATTRACTOR.to_vec()],
        }
    }
}

/// One line of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub x0: Vec<f64>,
    pub final_x: Vec<f64>,
    pub stop_reason: StopReason,
    /// Absent for systems without constraints data.
    pub classification: Option<KktClass>,
    /// Distance to the nearest known solution, when any is known.
    pub distance: Option<f64>,
    pub steps: usize,
    pub monitor_violations: usize,
}

fn distance_to(x: &[f64], targets: &[Vec<f64>]) -> Option<f64> {
    targets
        .iter()
        .map(|t| norm(&x.iter().zip(t).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .min_by(f64::total_cmp)
}

fn sweep_one(
    target: &SweepTarget,
    integrator: &IntegratorConfig,
    x0: &[f64],
) -> Result<(Trajectory, SweepRow), Error> {
    let (traj, classification) = match target {
        SweepTarget::Nlp(p, cfg) => {
            let traj = integrate(&NlpSystem::new(p, cfg), x0, integrator, &MonitorConfig::default())?;
            let c = classify(p, traj.final_x(), &limit_tolerances(integrator))?.class;
            (traj, Some(c))
        }
        SweepTarget::Planar => (
            integrate(&PlanarSystem, x0, integrator, &MonitorConfig::default())?,
            None,
        ),
    };
    let row = SweepRow {
        x0: x0.to_vec(),
        final_x: traj.final_x().to_vec(),
        stop_reason: traj.stop_reason,
        classification,
        distance: distance_to(traj.final_x(), &target.targets()),
        steps: traj.steps,
        monitor_violations: traj.monitor_violations.len(),
    };
    Ok((traj, row))
}

/// Integrates from every point; results are in input order whether or
/// not the runs execute in parallel.
pub fn sweep(
    target: &SweepTarget,
    integrator: &IntegratorConfig,
    points: &[Vec<f64>],
    parallel: bool,
) -> Result<Vec<(Trajectory, SweepRow)>, Error> {
    if parallel {
        points
            .par_iter()
            .map(|x0| sweep_one(target, integrator, x0))
            .collect()
    } else {
        points.iter().map(|x0| sweep_one(target, integrator, x0)).collect()
    }
}

/// Summary CSV: `x0_1..,final_1..,stop_reason,classification,distance,steps`.
pub fn write_sweep_csv<W: Write>(w: &mut W, n: usize, rows: &[SweepRow]) -> io::Result<()> {
    let mut header: Vec<String> = (1..=n).map(|i| format!("x0_{i}")).collect();
    header.extend((1..=n).map(|i| format!("final_{i}")));
    header.extend(
        ["stop_reason", "classification", "distance", "steps", "monitor_violations"]
            .map(String::from),
    );
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut row: Vec<String> = r.x0.iter().map(|&v| num(v)).collect();
        row.extend(r.final_x.iter().map(|&v| num(v)));
        row.push(r.stop_reason.to_string());
        row.push(r.classification.map_or(String::new(), |c| c.to_string()));
        row.push(r.distance.map_or(String::new(), num));
        row.push(r.steps.to_string());
        row.push(r.monitor_violations.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Settings of [`check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOptions {
    pub samples: usize,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    pub tol: f64,
    pub band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LicqSummary {
    /// Samples whose constraint violation is within the band.
    pub band_samples: usize,
    pub min_det_q: Option<f64>,
    /// Smallest `det(AA')` over all samples; absent without equalities.
    pub min_det_aa: Option<f64>,
    /// Band samples with `det(Q)` (or `det(AA')`) at most the LICQ threshold.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyCriticalSummary {
    /// Samples with `|∇V| <= tol` and `V > tol`.
    pub violations: usize,
    pub examples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentRegionSummary {
    /// Samples with `a(x) > 0`.
    pub positive_samples: usize,
    pub max_theta: Option<f64>,
    pub max_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub problem: String,
    pub options: CheckOptions,
    pub solver: SolverSummary,
    pub licq: LicqSummary,
    pub penalty_critical: PenaltyCriticalSummary,
    pub descent_region: DescentRegionSummary,
    pub verdict: String,
}

fn opt_min(a: Option<f64>, b: f64) -> Option<f64> {
    Some(a.map_or(b, |a| a.min(b)))
}

fn opt_max(a: Option<f64>, b: f64) -> Option<f64> {
    Some(a.map_or(b, |a| a.max(b)))
}

/// Samples the box uniformly and looks for counterexamples to the
/// solver's assumptions. Never asserts that an assumption holds.
pub fn check(prob: &NlpProblem, solver: &SolverConfig, opts: &CheckOptions) -> Result<CheckReport, Error> {
    if opts.samples == 0 {
        return Err(Error::InvalidConfig("check needs at least one sample".into()));
    }
    if opts.bounds.len() != prob.n() {
        return Err(Error::DimensionMismatch {
            expected: prob.n(),
            got: opts.bounds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut licq = LicqSummary {
        band_samples: 0,
        min_det_q: None,
        min_det_aa: None,
        violations: 0,
    };
    let mut crit = PenaltyCriticalSummary {
        violations: 0,
        examples: Vec::new(),
    };
    let mut desc = DescentRegionSummary {
        positive_samples: 0,
        max_theta: None,
        max_v: None,
    };
    for _ in 0..opts.samples {
        let x: Vec<f64> = opts.bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        let r = analyze(prob, solver, &x)?;
        let ev = prob.evaluate(&x)?;
        let violation = ev
            .h
            .iter()
            .map(|v| v.abs())
            .chain(ev.g.iter().copied())
            .fold(0.0f64, f64::max);
        if prob.m() > 0 {
            licq.min_det_aa = opt_min(licq.min_det_aa, r.det_aa);
        }
        if violation <= opts.band {
            licq.band_samples += 1;
            licq.min_det_q = opt_min(licq.min_det_q, r.det_q);
            if !r.geometry.licq() || r.det_q <= TOL_PD {
                licq.violations += 1;
            }
        }
        if norm(&r.grad_v) <= opts.tol && r.v > opts.tol {
            crit.violations += 1;
            if crit.examples.len() < 5 {
                crit.examples.push(x.clone());
            }
        }
        if r.a_val > 0.0 {
            desc.positive_samples += 1;
            desc.max_theta = opt_max(desc.max_theta, r.theta);
            desc.max_v = opt_max(desc.max_v, r.v);
        }
    }
    let found = licq.violations + crit.violations;
    let verdict = if found == 0 {
        format!("no violation found in {} samples", opts.samples)
    } else {
        format!("{found} violations found in {} samples", opts.samples)
    };
    Ok(CheckReport {
        problem: prob.name().to_string(),
        options: opts.clone(),
        solver: solver.into(),
        licq,
        penalty_critical: crit,
        descent_region: desc,
        verdict,
    })
}

/// Settings of [`demo`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoOptions {
    pub seed: u64,
    pub points: usize,
    pub grid_count: usize,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 1000,
            grid_count: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub options: DemoOptions,
    pub identity_tol: f64,
    /// Largest relative gap between `∇V·f` and its closed form.
    pub dv_max_rel_err: f64,
    /// Largest relative gap between `∇θ·f` and its closed form.
    pub dtheta_max_rel_err: f64,
    pub identity_pass: bool,
    pub attractor: [f64; 2],
    pub attractor_tol: f64,
    pub sweep_runs: usize,
    pub max_distance: f64,
    pub attractor_pass: bool,
    pub pass: bool,
}

/// `|a − b| / scale`, with `0/0` read as 0.
pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / scale
    }
}

/// Planar demo: closed-form `∇V·f` and `∇θ·f` against dot products at
/// random points of `[−3, 3]²`, then a sweep over `[−2, 2]²`.
pub fn demo(opts: &DemoOptions) -> Result<(DemoReport, Vec<SweepRow>), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut dv_err, mut dth_err) = (0.0f64, 0.0f64);
    for _ in 0..opts.points {
        let x = [rng.gen_range(-3.0..=3.0), rng.gen_range(-3.0..=3.0)];
        let p = planar_demo_field(x);
        let gp = 2.0 * (x[0] * x[0] + x[1] * x[1] - 1.0).max(0.0);
        let gv = [gp * x[0], gp * x[1]];
        let dv = dot(&gv, &p.f);
        let dv_scale = (gv[0] * p.f[0]).abs() + (gv[1] * p.f[1]).abs();
        dv_err = dv_err.max(rel_err(dv, p.dv_f, dv_scale.max(p.dv_f.abs())));
        let dth = p.f[0] + p.f[1];
        let dth_scale = p.f[0].abs() + p.f[1].abs();
        dth_err = dth_err.max(rel_err(dth, p.dtheta_f, dth_scale.max(p.dtheta_f.abs())));
    }
    let identity_tol = 1e-9;
    let identity_pass = dv_err <= identity_tol && dth_err <= identity_tol;

    let axis = GridAxis {
        lo: -2.0,
        hi: 2.0,
        count: opts.grid_count,
    };
    let pts = grid_points(&[axis, axis]);
    let ic = IntegratorConfig::default();
    let rows: Vec<SweepRow> = sweep(&SweepTarget::Planar, &ic, &pts, true)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    let max_distance = rows
        .iter()
        .map(|r| r.distance.unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    let attractor_tol = 1e-4;
    let attractor_pass = !rows.is_empty() && max_distance <= attractor_tol;
    Ok((
        DemoReport {
            options: *opts,
            identity_tol,
            dv_max_rel_err: dv_err,
            dtheta_max_rel_err: dth_err,
            identity_pass,
            attractor: PLANAR_ATTRACTOR,
            attractor_tol,
            sweep_runs: rows.len(),
            max_distance,
            attractor_pass,
            pass: identity_pass && attractor_pass,
        },
        rows,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.9}")).collect();
    format!("({})", parts.join(", "))
}

/// Runs a parsed command line, returning the process exit code.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    let out = cli.out;
    match cli.command {
        Command::Solve(a) => run_solve(&out, &a),
        Command::Sweep(a) => run_sweep(&out, &a),
        Command::Check(a) => run_check(&out, &a),
        Command::Demo(a) => run_demo(&out, &a),
    }
}

fn run_solve(out: &Path, a: &SolveArgs) -> Result<u8, CliError> {
    let prob = load_problem(a.problem.problem.as_deref(), a.problem.problem_file.as_deref())?;
    let x0 = parse_point(&a.x0)?;
    if x0.len() != prob.n() {
        return Err(usage(format!(
            "--x0 has {} coordinates, problem `{}` has {}",
            x0.len(),
            prob.name(),
            prob.n()
        )));
    }
    let solver = a.field.to_config()?;
    let ic = a.integrator.to_config()?;
    let (traj, report) = solve(&prob, &solver, &ic, &x0)?;

    ensure_dir(out)?;
    let stem = file_stem(prob.name());
    let csv = out.join(format!("{stem}_trajectory.csv"));
    let json = out.join(format!("{stem}_report.json"));
    write_with(&csv, |w| write_trajectory_csv(w, &traj))?;
    write_json(&json, &report)?;
    println!(
        "{}: {} after {} steps, x = {}, {}",
        report.problem,
        report.stop_reason,
        report.steps,
        fmt_point(&report.final_x),
        report.classification
    );
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(report.exit_code)
}

fn run_sweep(out: &Path, a: &SweepArgs) -> Result<u8, CliError> {
    let target = if a.problem.as_deref() == Some(PLANAR_NAME) {
        SweepTarget::Planar
    } else {
        let prob = load_problem(a.problem.as_deref(), a.problem_file.as_deref())?;
        SweepTarget::Nlp(prob, a.field.to_config()?)
    };
    let axes = a
        .grid
        .iter()
        .map(|s| GridAxis::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let axes = expand(axes, target.dim(), "grid")?;
    let total = axes
        .iter()
        .try_fold(1usize, |acc, ax| acc.checked_mul(ax.count))
        .unwrap_or(usize::MAX);
    if total > a.max_points {
        return Err(usage(format!(
            "grid has {total} points, more than --max-points {}",
            a.max_points
        )));
    }
    let ic = a.integrator.to_config()?;
    let pts = grid_points(&axes);
    let results = sweep(&target, &ic, &pts, !a.serial)?;

    ensure_dir(out)?;
    let stem = file_stem(target.name());
    if a.write_trajectories {
        let dir = out.join(format!("{stem}_sweep"));
        ensure_dir(&dir)?;
        for (i, (traj, _)) in results.iter().enumerate() {
            write_with(&dir.join(format!("point_{i:05}.csv")), |w| {
                write_trajectory_csv(w, traj)
            })?;
        }
    }
    let rows: Vec<SweepRow> = results.into_iter().map(|(_, r)| r).collect();
    let csv = out.join(format!("{stem}_sweep.csv"));
    write_with(&csv, |w| write_sweep_csv(w, target.dim(), &rows))?;
    let converged = rows.iter().filter(|r| r.stop_reason.is_converged()).count();
    let worst = rows.iter().filter_map(|r| r.distance).fold(None, opt_max);
    match worst {
        Some(d) => println!(
            "{}: {converged}/{} runs converged, largest distance to a known solution {d:.3e}",
            target.name(),
            rows.len()
        ),
        None => println!("{}: {converged}/{} runs converged", target.name(), rows.len()),
    }
    println!("wrote {}", csv.display());
    Ok(if converged == rows.len() { 0 } else { 1 })
}

fn run_check(out: &Path, a: &CheckArgs) -> Result<u8, CliError> {
    let prob = load_problem(a.problem.problem.as_deref(), a.problem.problem_file.as_deref())?;
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let bounds = a
        .bounds
        .iter()
        .map(|s| parse_interval(s))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = CheckOptions {
        samples: a.samples,
        seed: a.seed,
        bounds: expand(bounds, prob.n(), "box")?,
        tol: a.tol,
        band: a.band,
    };
    let report = check(&prob, &a.field.to_config()?, &opts)?;
    ensure_dir(out)?;
    let json = out.join(format!("{}_check.json", file_stem(prob.name())));
    write_json(&json, &report)?;
    println!(
        "{}: {} (seed {}); licq band samples {}, min det(Q) {}; a(x) > 0 at {} samples",
        report.problem,
        report.verdict,
        opts.seed,
        report.licq.band_samples,
        report.licq.min_det_q.map_or("n/a".into(), |v| format!("{v:.3e}")),
        report.descent_region.positive_samples
    );
    println!("wrote {}", json.display());
    Ok(0)
}

fn run_demo(out: &Path, a: &DemoArgs) -> Result<u8, CliError> {
    if a.grid_count == 0 {
        return Err(usage("--grid-count must be at least 1"));
    }
    let opts = DemoOptions {
        seed: a.seed,
        points: a.points,
        grid_count: a.grid_count,
    };
    let (report, rows) = demo(&opts)?;
    ensure_dir(out)?;
    let json = out.join("demo_report.json");
    let csv = out.join("demo_sweep.csv");
    write_json(&json, &report)?;
    write_with(&csv, |w| write_sweep_csv(w, 2, &rows))?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!(
        "{} identities at {} points: max rel err {:.3e} / {:.3e}",
        verdict(report.identity_pass),
        opts.points,
        report.dv_max_rel_err,
        report.dtheta_max_rel_err
    );
    println!(
        "{} attractor sweep of {} runs: max distance {:.3e}",
        verdict(report.attractor_pass),
        report.sweep_runs,
        report.max_distance
    );
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(if report.pass { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_parsing() {
        assert_eq!(parse_point("-1, -1,2,1").unwrap(), vec![-1.0, -1.0, 2.0, 1.0]);
        assert!(parse_point("1,,2").is_err());
        assert!(parse_point("nan").is_err());
    }

    #[test]
    fn grid_axes() {
        let ax = GridAxis::parse("-3:3:11").unwrap();
        let v = ax.values();
        assert_eq!(v.len(), 11);
        assert_eq!(v[0], -3.0);
        assert_eq!(v[10], 3.0);
        assert!((v[5]).abs() < 1e-15);
        assert_eq!(GridAxis::parse("2:2:1").unwrap().values(), vec![2.0]);
        for bad in ["1:0:3", "0:1", "0:1:0", "a:1:2"] {
            assert!(GridAxis::parse(bad).is_err(), "{bad}");
        }
        let pts = grid_points(&[GridAxis::parse("0:1:2").unwrap(), GridAxis::parse("5:7:3").unwrap()]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.0, 5.0]);
        assert_eq!(pts[1], vec![0.0, 6.0]);
        assert_eq!(pts[5], vec![1.0, 7.0]);
    }

    #[test]
    fn exit_codes() {
        use StopReason::*;
        assert_eq!(exit_code_for(ConvergedKkt, KktClass::KktPoint), 0);
        assert_eq!(exit_code_for(ConvergedEquilibrium, KktClass::KktPoint), 0);
        assert_eq!(exit_code_for(HorizonReached, KktClass::KktPoint), 1);
        assert_eq!(exit_code_for(ConvergedEquilibrium, KktClass::FeasibleNonKkt), 1);
        assert_eq!(exit_code_for(HorizonReached, KktClass::CqFailure), 3);
    }

    #[test]
    fn csv_header_and_precision() {
        let p = builtin("ex71").unwrap();
        let (traj, _) = solve(&p, &SolverConfig::unit(), &IntegratorConfig::default(), &[0.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,V,theta,fnorm,feasible");
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 7);
        assert!(row.starts_with("0.0000000000000000e0,"));
    }

    #[test]
    fn zero_samples_rejected() {
        let p = builtin("ex71").unwrap();
        let opts = CheckOptions {
            samples: 0,
            seed: 1,
            bounds: vec![(-1.0, 1.0); 2],
            tol: 1e-6,
            band: 0.1,
        };
        assert!(check(&p, &SolverConfig::unit(), &opts).is_err());
    }
}
