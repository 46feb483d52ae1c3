use std::process::Command;

fn switchid() -> Command {
    Command::new(env!("CARGO_BIN_EXE_switchid"))
}

#[test]
fn demo_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = switchid()
        .args(["demo", "--t-end", "4", "--quiet", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,sigma,x1,x2,u1,theta_hat_1_1,"));
    assert!(header.ends_with("lambda_min_Q"));
    assert_eq!(lines.count(), 4001);

    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.lines().all(|l| l.is_empty() || l.contains(": ")));
    assert!(report.contains("subsystem_2.detected_at: "));
    assert!(report.trim_end().ends_with("result: pass"));
}

#[test]
fn run_honours_seed_and_dt_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        r#"
name = "tiny"

[system]
states = 1
inputs = 1
subsystems = [{ a = [[-1.0]], b = [[1.0]] }]

[run]
t_end = 1.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = switchid()
        .arg("run")
        .arg(&cfg)
        .args(["--seed", "3", "--dt", "0.01", "--out-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("tiny: 100 steps"), "{stdout}");
    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("seed: 3"));
    assert!(report.contains("steps: 100"));
}

#[test]
fn check_reports_every_issue_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        r#"
[system]
states = 1
inputs = 1
subsystems = [{ a = [[-1.0]], b = [[1.0]] }]

[filters]
k_f = -1.0

[schedule]
events = [{ time = 0.0005, subsystem = 1 }]
"#,
    )
    .unwrap();
    let out = switchid().arg("check").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("filters.k_f"), "{stderr}");
    assert!(stderr.contains("schedule.events[0].time"), "{stderr}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn check_accepts_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    std::fs::write(&cfg, switchid::harness::FLAGSHIP).unwrap();
    let out = switchid().arg("check").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 subsystems, 19 switches"));
}

#[test]
fn missing_file_is_an_error() {
    let out = switchid().args(["run", "/nonexistent/scenario.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}
