mod common;

use nlpflow::cli::{check, grid_points, sweep, CheckOptions, GridAxis, SweepTarget};
use nlpflow::field::{analyze, SolverConfig, PLANAR_ATTRACTOR};
use nlpflow::integrate::{
    integrate, IntegratorConfig, Method, MonitorConfig, MonitorViolation, NlpSystem, PlanarSystem, RecordEvery,
    StopReason,
};
use nlpflow::kkt::KktClass;
use nlpflow::problem::{builtin, ex71, ex72_with, rosen_suzuki};

use common::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn rosen_suzuki_reference_start() {
    let prob = rosen_suzuki();
    let cfg = SolverConfig::det_scaled();
    let traj = integrate(
        &NlpSystem::new(&prob, &cfg),
        &[-1.0, -1.0, 2.0, 1.0],
        &IntegratorConfig::default(),
        &MonitorConfig::default(),
    )
    .unwrap();
    assert!(traj.stop_reason.is_converged(), "{}", traj.stop_reason);
    assert!(dist(traj.final_x(), &[0.0, 1.0, 2.0, -1.0]) <= 1e-3, "{:?}", traj.final_x());
    assert!(traj.monitor_violations.is_empty(), "{:?}", traj.monitor_violations);
}

#[test]
fn planar_demo_from_far_corner() {
    let traj = integrate(&PlanarSystem, &[2.0, 2.0], &IntegratorConfig::default(), &MonitorConfig::default()).unwrap();
    assert!(dist(traj.final_x(), &PLANAR_ATTRACTOR) <= 1e-4, "{:?}", traj.final_x());
}

#[test]
fn feasible_start_stays_feasible() {
    let prob = ex71();
    let cfg = SolverConfig::unit();
    let traj = integrate(
        &NlpSystem::new(&prob, &cfg),
        &[0.5, 0.5],
        &IntegratorConfig::default(),
        &MonitorConfig::default(),
    )
    .unwrap();
    assert!(traj.records.iter().all(|r| r.violation <= 1e-6));
    assert!(traj.monitor_violations.is_empty());
    assert!(dist(traj.final_x(), &[0.0, 0.0]) <= 1e-4);
}

fn grid_for(n: usize) -> Vec<Vec<f64>> {
    let count = if n == 2 { 5 } else { 3 };
    let axis = GridAxis { lo: -3.0, hi: 3.0, count };
    grid_points(&vec![axis; n])
}

#[test]
fn penalty_never_rises_and_runs_stay_bounded() {
    for name in ["ex71", "ex72", "rosen_suzuki"] {
        let prob = builtin(name).unwrap();
        let cfg = if name == "rosen_suzuki" { SolverConfig::det_scaled() } else { SolverConfig::unit() };
        let pts = grid_for(prob.n());
        let runs = sweep(&SweepTarget::Nlp(prob, cfg), &IntegratorConfig::default(), &pts, true).unwrap();
        for (traj, row) in &runs {
            let bad: Vec<_> = traj
                .monitor_violations
                .iter()
                .filter(|v| matches!(v, MonitorViolation::PenaltyIncrease { .. } | MonitorViolation::Unbounded { .. }))
                .collect();
            assert!(bad.is_empty(), "{name} from {:?}: {bad:?}", row.x0);
            assert!(traj.records.iter().all(|r| r.x.iter().all(|v| v.abs() < 1e3)));
            assert_eq!(row.classification, Some(KktClass::KktPoint), "{name} from {:?}", row.x0);
        }
    }
}

#[test]
fn serial_and_parallel_sweeps_agree_bitwise() {
    let pts = grid_for(2);
    let target = SweepTarget::Nlp(ex71(), SolverConfig::default());
    let ic = IntegratorConfig::default();
    let a = sweep(&target, &ic, &pts, false).unwrap();
    let b = sweep(&target, &ic, &pts, true).unwrap();
    for ((ta, ra), (tb, rb)) in a.iter().zip(&b) {
        assert_eq!(ra, rb);
        assert_eq!(ta.records, tb.records);
    }
}

#[test]
fn fixed_step_method_reaches_the_same_limit() {
    let prob = ex72_with(1.0, 2.0).unwrap();
    let cfg = SolverConfig::unit();
    let ic = IntegratorConfig {
        method: Method::FixedRk4,
        h_init: 0.01,
        record_every: RecordEvery::Interval(0.5),
        ..IntegratorConfig::default()
    };
    let traj = integrate(&NlpSystem::new(&prob, &cfg), &[-1.0, 1.0], &ic, &MonitorConfig::default()).unwrap();
    assert!(traj.stop_reason.is_converged());
    assert!(dist(traj.final_x(), &[2.0, 0.0]) <= 1e-6);
    assert!(traj.records.windows(2).all(|w| w[1].t > w[0].t));
}

#[test]
fn horizon_stops_unfinished_runs() {
    let prob = rosen_suzuki();
    let cfg = SolverConfig::det_scaled();
    let ic = IntegratorConfig {
        t_max: 1e-3,
        ..IntegratorConfig::default()
    };
    let traj = integrate(&NlpSystem::new(&prob, &cfg), &[3.0, 3.0, 3.0, 3.0], &ic, &MonitorConfig::default()).unwrap();
    assert_eq!(traj.stop_reason, StopReason::HorizonReached);
    assert_eq!(traj.last().t, 1e-3);
}

#[test]
fn equality_problem_descent_diagnostic_matches_closed_form() {
    let (a, b) = (1.5, 2.0);
    let prob = ex72_with(a, b).unwrap();
    let cfg = SolverConfig::unit();
    let mut r = rng(74);
    for _ in 0..100 {
        let x = uniform_vec(&mut r, 2, -4.0, 4.0);
        let got = analyze(&prob, &cfg, &x).unwrap().a_val;
        let expect = -4.0 * a * a * x[1] * x[1] * (1.0 + (x[0] - b).powi(2)) - 2.0 * x[0] * (x[0] - b);
        assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");
    }
    let mid = analyze(&prob, &cfg, &[b / 2.0, 0.0]).unwrap().a_val;
    assert!((mid - b * b / 2.0).abs() <= 1e-12);
}

#[test]
fn sampled_descent_region_respects_the_objective_bound() {
    let (a, b) = (1.0, 1.0);
    let prob = ex72_with(a, b).unwrap();
    let report = check(
        &prob,
        &SolverConfig::unit(),
        &CheckOptions {
            samples: 20_000,
            seed: 3,
            bounds: vec![(-1.0, 3.0), (-1.0, 1.0)],
            tol: 1e-6,
            band: 0.1,
        },
    )
    .unwrap();
    let bound = (0..=10_000)
        .map(|i| {
            let x1 = b * i as f64 / 10_000.0;
            x1 * x1 - x1 * (x1 - b) / (2.0 * a * (1.0 + (x1 - b).powi(2)))
        })
        .fold(f64::MIN, f64::max);
    assert!(report.descent_region.positive_samples > 0);
    let max_theta = report.descent_region.max_theta.unwrap();
    assert!(max_theta <= bound, "{max_theta} > {bound}");
    assert_eq!(report.licq.violations, 0);
    assert_eq!(report.penalty_critical.violations, 0);
}
