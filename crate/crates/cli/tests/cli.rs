use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulseflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_writes_trajectory_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "simulate",
        "--scenario",
        "trivial",
        "--out",
        out,
        "--samples",
        "10",
        "--one-sided",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let csv = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,u1"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    let at = |t: f64| rows.iter().find(|r| r[0] == t).unwrap().clone();
    let before = at(0.5f64.next_down());
    let jump = at(0.5);
    assert_eq!((before[1], before[2]), (0.5, 0.0));
    assert!((jump[1] - 1.5).abs() < 1e-12 && jump[2] == 1.0);
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(record["passed"], true);
    assert!((record["endpoint"][0].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert!(stderr(&o).contains("x(1.0) = ["));
}

#[test]
fn simulate_worked_example_reports_payoff() {
    let o = run(&["simulate", "--scenario", "example25"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let record: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(record["payoff"].as_f64().unwrap().abs() < 1e-6);
    let checks = record["expected"].as_array().unwrap();
    assert_eq!(checks.len(), 5);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn simulate_csv_to_stdout_is_reproducible() {
    let args = [
        "simulate",
        "--scenario",
        "polar",
        "--format",
        "csv",
        "--samples",
        "20",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 22);
}

#[test]
fn noncommuting_scenario_warns_on_stderr() {
    let o = run(&["simulate", "--scenario", "noncommutative-loop"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stderr(&o).to_lowercase().contains("commut"),
        "{}",
        stderr(&o)
    );
    let record: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!record["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn config_file_recombines_controls() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        "[system]\nscenario = \"scalar-exp\"\nx0 = [2.0]\n\
         [controls]\nu_switch_times = [0.25]\nu_values = [[0.0], [0.5]]\n",
    )
    .unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let record: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let x1 = record["endpoint"][0].as_f64().unwrap();
    assert!((x1 - 2.0 * 0.5f64.exp()).abs() < 1e-9, "{x1}");
    assert_eq!(record["controls"], "custom");
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(
        run(&["simulate", "--scenario", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "--scenario", "trivial", "--controls", "nope"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["check", "converge", "--scenario", "trivial", "--k", "8,4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["reproduce", "nope"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[system]\nscenario = \"trivial\"\nunknown = 1\n").unwrap();
    assert_eq!(
        run(&["simulate", "--config", path.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn commute_check_passes_and_fails_as_expected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["check", "commute", "--scenario", "polar", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verdict.json")).unwrap())
            .unwrap();
    assert_eq!(verdict["check"], "commute");
    assert_eq!(verdict["passed"], true);
    assert!(dir.path().join("report.csv").exists());

    let off_axis = run(&["check", "commute", "--scenario", "noncommutative-loop"]);
    assert_eq!(off_axis.status.code(), Some(0));
    let path = dir.path().join("axis.toml");
    fs::write(
        &path,
        "[system]\nscenario = \"noncommutative-loop\"\n\
         region = { lower = [-1.0, -1.0, -1.0], upper = [1.0, 1.0, 1.0] }\n",
    )
    .unwrap();
    let around_axis = run(&["check", "commute", "--config", path.to_str().unwrap()]);
    assert_eq!(around_axis.status.code(), Some(1));
    assert!(stderr(&around_axis).contains("FAIL"));
}

#[test]
fn converge_check_reports_each_mesh() {
    let o = run(&[
        "check",
        "converge",
        "--scenario",
        "scalar-exp",
        "--k",
        "4,8,16",
    ]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("k,pointwise_error,control_l1_error,state_l1_error,endpoint_error,combined")
    );
    let ks: Vec<f64> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks, vec![4.0, 8.0, 16.0]);
}

#[test]
fn est_l1_recovers_the_trivial_constant() {
    let o = run(&[
        "check",
        "estL1",
        "--scenario",
        "trivial",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let verdict: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let m = verdict["report"]["m_hat"].as_f64().unwrap();
    assert!((m - 2.0).abs() < 1e-9, "{m}");
}

#[test]
fn reproduce_trivial_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["reproduce", "trivial", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("trivial"));
    let csv = fs::read_to_string(dir.path().join("reproduce.csv")).unwrap();
    assert!(csv.starts_with("quantity,expected,got,tol,verdict\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")));
    assert!(dir.path().join("reproduce.json").exists());
}

#[test]
fn list_names_every_scenario() {
    let o = run(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    for name in [
        "trivial",
        "scalar-exp",
        "scalar-drift",
        "example25",
        "polar",
        "noncommutative-loop",
    ] {
        assert!(stdout(&o).contains(name));
    }
}
