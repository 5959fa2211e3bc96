//! End-to-end tests of the `mtdc` binary: exit codes, file outputs,
//! machine-readable format.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtdc"))
}

fn fourbus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fourbus.scenario")
}

const SMALL: &str = "\
[network]
buses = 2
bus = 1 1.0 10.0
bus = 2 1.0 10.0
line = 1 2 0.5

[controller]
kp = 1
kv = 1
gamma = 0.1
delta = 0.1
tau = 0

[injection]
initial = 1 -1
switch = 0 2 -1

[sim]
t_end = 30.0
step = 0.001
record_every = 100
";

fn write_scenario(dir: &std::path::Path, text: &str) -> PathBuf {
    let p = dir.join("test.scenario");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn missing_scenario_exits_2() {
    let out = bin()
        .args(["analyze", "--scenario", "/nonexistent/x.scenario"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_error_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), &SMALL.replace("line = 1 2 0.5", "line = 1 2 oops"));
    let out = bin()
        .args(["analyze", "--scenario", p.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "stderr: {err}");
}

#[test]
fn disconnected_graph_exits_2_naming_problem() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("buses = 2", "buses = 3")
        .replace("bus = 2 1.0 10.0", "bus = 2 1.0 10.0\nbus = 3 1.0 10.0")
        .replace("initial = 1 -1", "initial = 1 -1 0")
        .replace("switch = 0 2 -1", "");
    let p = write_scenario(dir.path(), &text);
    let out = bin()
        .args(["analyze", "--scenario", p.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unreachable"), "stderr: {err}");
}

#[test]
fn simulate_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "simulate",
            "--scenario",
            p.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,V_1,V_2,u_1,u_2,Vhat_1,Vhat_2,Vbar_1,Vbar_2"
    );
    // full-precision values parse back as f64
    for field in lines.next().unwrap().split(',') {
        field.parse::<f64>().unwrap();
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["diverged"], false);
    assert!(summary["predicted"].is_object());
}

#[test]
fn machine_format_emits_json() {
    let out = bin()
        .args([
            "dispatch",
            "--scenario",
            fourbus().to_str().unwrap(),
            "--format",
            "machine",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let u: Vec<f64> = v["u_star"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    for x in u {
        assert!((x - 50.0).abs() < 1e-9);
    }
}

#[test]
fn analyze_fourbus_reports_stable() {
    let out = bin()
        .args(["analyze", "--scenario", fourbus().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("stable: true"), "{text}");
    assert!(text.contains("5.687500"), "{text}");
}

#[test]
fn diverged_run_exits_0_with_flag() {
    // strongly delayed consensus on a non-stiff 2-bus loop is unstable
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("gamma = 0.1", "gamma = 3.0")
        .replace("delta = 0.1", "delta = 3.0")
        .replace("tau = 0", "tau = 1.0")
        .replace("t_end = 30.0", "t_end = 200.0\nblow_up = 1000");
    let p = write_scenario(dir.path(), &text);
    let out = bin()
        .args([
            "simulate",
            "--scenario",
            p.to_str().unwrap(),
            "--format",
            "machine",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["diverged"], true, "{v}");
}

#[test]
fn tau_override_must_align_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), SMALL);
    let out = bin()
        .args([
            "simulate",
            "--scenario",
            p.to_str().unwrap(),
            "--tau",
            "0.0015",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_range_and_list_specs() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("t_end = 30.0", "t_end = 5.0");
    let p = write_scenario(dir.path(), &text);
    for spec in ["0,0.01", "0:0.01:0.01"] {
        let out = bin()
            .args([
                "sweep-delay",
                "--scenario",
                p.to_str().unwrap(),
                "--tau",
                spec,
                "--format",
                "machine",
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 2, "{v}");
    }
    let bad = bin()
        .args([
            "sweep-delay",
            "--scenario",
            p.to_str().unwrap(),
            "--tau",
            "zebra",
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn analyze_matches_simulate_final_state() {
    // the cross-command consistency promise on a stable scenario
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), &SMALL.replace("t_end = 30.0", "t_end = 200.0"));
    let ana = bin()
        .args([
            "analyze",
            "--scenario",
            p.to_str().unwrap(),
            "--format",
            "machine",
        ])
        .output()
        .unwrap();
    let sim = bin()
        .args([
            "simulate",
            "--scenario",
            p.to_str().unwrap(),
            "--format",
            "machine",
        ])
        .output()
        .unwrap();
    let a: serde_json::Value = serde_json::from_slice(&ana.stdout).unwrap();
    let s: serde_json::Value = serde_json::from_slice(&sim.stdout).unwrap();
    let pv = a["steady_state"]["v"].as_array().unwrap();
    let fv = s["final_v"].as_array().unwrap();
    for (x, y) in pv.iter().zip(fv) {
        let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
        assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0), "{x} vs {y}");
    }
}
