use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nlpflow(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlpflow"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("NLPFLOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_trajectory_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlpflow(dir.path(), &["solve", "--problem", "ex71", "--x0", "1.5,-0.5", "--psi1", "1", "--sigma-norm", "off"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(dir.path().join("ex71_trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,V,theta,fnorm,feasible");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[1].parse::<f64>().unwrap(), 1.5);
    assert_eq!(first[2].parse::<f64>().unwrap(), -0.5);

    let r = json(&dir.path().join("ex71_report.json"));
    assert_eq!(r["classification"], "kkt_point");
    assert_eq!(r["exit_code"], 0);
    let x = r["final_x"].as_array().unwrap();
    assert!(x.iter().all(|v| v.as_f64().unwrap().abs() < 1e-4));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nlpflow"))
        .args(["solve", "--problem", "ex72", "--x0", "0,0"])
        .env("NLPFLOW_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("ex72_report.json").exists());
}

#[test]
fn unfinished_run_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlpflow(dir.path(), &["solve", "--problem", "rosen_suzuki", "--x0", "-1,-1,2,1", "--tmax", "0.001"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&dir.path().join("rosen_suzuki_report.json"))["stop_reason"], "horizon_reached");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--problem", "ex71", "--x0", "1,2,3"][..],
        &["solve", "--problem", "ex71"][..],
        &["check", "--problem", "ex71", "--samples", "0"][..],
        &["sweep", "--problem", "ex71", "--grid", "-1:1:200", "--max-points", "100"][..],
        &["solve", "--problem", "ex71", "--x0", "0,0", "--sigma-norm", "maybe"][..],
    ] {
        let o = nlpflow(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn degenerate_limit_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("twice.txt");
    fs::write(
        &file,
        "name = twice\nn = 2\nobjective = (x1 - 2)^2 + x2^2\nineq = x1 - 1\nineq = x1 - 1\n",
    )
    .unwrap();
    let o = nlpflow(dir.path(), &["solve", "--problem-file", file.to_str().unwrap(), "--x0", "2,0.5", "--tmax", "50"]);
    let r = json(&dir.path().join("twice_report.json"));
    assert_eq!(r["classification"], "cq_failure", "{r}");
    assert_eq!(code(&o), 3);
}

#[test]
fn problem_file_with_known_solution() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("disk.txt");
    fs::write(
        &file,
        "# nearest point of the unit disk to (2, 1)\nname = disk\nn = 2\nobjective = (x1 - 2)^2 + (x2 - 1)^2\nineq = x1^2 + x2^2 - 1\nkkt = 0.894427190999916, 0.447213595499958\n",
    )
    .unwrap();
    let o = nlpflow(dir.path(), &["sweep", "--problem-file", file.to_str().unwrap(), "--grid", "-2:2:3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(dir.path().join("disk_sweep.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let di = header.iter().position(|h| *h == "distance").unwrap();
    for line in csv.lines().skip(1) {
        let d: f64 = line.split(',').nth(di).unwrap().parse().unwrap();
        assert!(d < 1e-6, "{line}");
    }
}

#[test]
fn serial_and_parallel_sweeps_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--problem", "ex71", "--grid", "-3:3:4", "--write-trajectories"];
    assert_eq!(code(&nlpflow(a.path(), &args)), 0);
    let mut serial = args.to_vec();
    serial.push("--serial");
    assert_eq!(code(&nlpflow(b.path(), &serial)), 0);
    for rel in ["ex71_sweep.csv", "ex71_sweep/point_00000.csv", "ex71_sweep/point_00015.csv"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn single_point_sweep_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&nlpflow(dir.path(), &["sweep", "--problem", "ex72", "--grid", "-2:-2:1", "--grid", "1:1:1"])), 0);
    assert_eq!(code(&nlpflow(dir.path(), &["solve", "--problem", "ex72", "--x0", "-2,1"])), 0);
    let csv = fs::read_to_string(dir.path().join("ex72_sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let report = json(&dir.path().join("ex72_report.json"));
    let x = report["final_x"].as_array().unwrap();
    for i in 0..2 {
        assert_eq!(row[2 + i].parse::<f64>().unwrap(), x[i].as_f64().unwrap());
    }
}

#[test]
fn planar_sweep_and_demo() {
    let dir = tempfile::tempdir().unwrap();
    // off-diagonal starts approach the attractor slowly and hit the horizon
    assert_eq!(code(&nlpflow(dir.path(), &["sweep", "--problem", "planar", "--grid", "-2:2:3"])), 1);
    let csv = fs::read_to_string(dir.path().join("planar_sweep.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let d: f64 = line.split(',').nth(6).unwrap().parse().unwrap();
        assert!(d < 1e-4, "{line}");
    }

    let again = tempfile::tempdir().unwrap();
    for d in [dir.path(), again.path()] {
        let o = nlpflow(d, &["demo", "--points", "200", "--grid-count", "5"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    for f in ["demo_report.json", "demo_sweep.csv"] {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
    }
    let r = json(&dir.path().join("demo_report.json"));
    assert_eq!(r["pass"], true);
}

#[test]
fn check_reports_descent_region() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlpflow(dir.path(), &["check", "--problem", "ex72", "--samples", "2000", "--box", "-1:3", "--box", "-1:1", "--psi1", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("ex72_check.json"));
    assert!(r["descent_region"]["positive_samples"].as_u64().unwrap() > 0);
    assert_eq!(r["licq"]["violations"], 0);
}
