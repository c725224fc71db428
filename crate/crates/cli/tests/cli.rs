//! Behavioral tests for the psq binary: exit codes, report schema, and
//! format equivalence.

use std::process::{Command, Output};

use serde_json::Value;

fn psq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psq")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn qlen_matches_the_documented_example() {
    let out = psq(&[
        "qlen", "--lambda", "0.5", "--dist", "exp:1", "--K", "1", "--max-n", "2", "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "name,u,n,r,value,ci_halfwidth");
    assert_eq!(lines.next().unwrap(), "qlen_pmf,,0,,0.25,");
    assert_eq!(lines.next().unwrap(), "qlen_pmf,,1,,0.25,");
    assert_eq!(lines.next().unwrap(), "qlen_pmf,,2,,0.1875,");
}

#[test]
fn busy_reports_the_takacs_root() {
    let out = psq(&["busy", "--lambda", "0.5", "--dist", "exp:1", "--r", "0.5"]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let row = &report["results"][0];
    assert_eq!(row["name"], "busy_lst");
    let got = row["value"].as_f64().unwrap();
    assert!((got - 0.585786).abs() < 1e-6, "pi(0.5) = {got}");
    assert!(report["diagnostics"]["iterations"].as_u64().unwrap() > 0);
}

#[test]
fn unstable_load_is_a_usage_error() {
    let out = psq(&["moments", "--lambda", "2", "--dist", "exp:1", "--u", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unstable: rho=2 >= 1"), "stderr: {err}");
}

#[test]
fn off_grid_atom_is_a_usage_error_with_a_hint() {
    let out = psq(&[
        "simulate", "--lambda", "0.5", "--dist", "det:0.3", "--grid-step", "0.2",
        "--departures", "1000", "--warmup", "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("atom at 0.3"), "stderr: {err}");
    assert!(err.contains("pick a step"), "stderr: {err}");
}

#[test]
fn engine_failures_emit_a_machine_readable_error() {
    // Far too few series terms for this r*u forces a NotConverged engine
    // error, which JSON mode must wrap as an error object with exit code 1.
    let out = psq(&[
        "lst", "--lambda", "0.5", "--dist", "exp:1", "--u", "4", "--r", "9", "--grid-step",
        "0.01", "--horizon", "5", "--terms", "8",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let obj = stdout_json(&out);
    assert_eq!(obj["error"]["kind"], "not_converged");
    assert!(obj["error"]["message"].as_str().unwrap().contains("8"));
}

#[test]
fn csv_and_json_agree_bit_for_bit() {
    let args = |fmt: &'static str| {
        vec![
            "moments", "--lambda", "0.5", "--dist", "exp:1", "--K", "1", "--u", "0.5,2",
            "--order", "3", "--grid-step", "0.01", "--horizon", "4", "--format", fmt,
        ]
    };
    let json_out = psq(&args("json"));
    let csv_out = psq(&args("csv"));
    assert!(json_out.status.success() && csv_out.status.success());

    let report = stdout_json(&json_out);
    let rows = report["results"].as_array().unwrap();
    let csv_text = String::from_utf8(csv_out.stdout).unwrap();
    let csv_rows: Vec<&str> = csv_text.lines().skip(1).collect();
    assert_eq!(rows.len(), csv_rows.len());
    assert_eq!(rows.len(), 6);
    for (row, line) in rows.iter().zip(&csv_rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(row["name"].as_str().unwrap(), fields[0]);
        // Both formats print shortest round-trip decimals, so parsing must
        // recover bit-identical doubles.
        let json_value = row["value"].as_f64().unwrap();
        let csv_value: f64 = fields[4].parse().unwrap();
        assert_eq!(json_value.to_bits(), csv_value.to_bits());
    }
}

#[test]
fn json_reports_are_deterministic_and_round_trip() {
    let args = [
        "variance", "--lambda", "0.5", "--dist", "exp:1", "--u", "1,2", "--grid-step", "0.01",
        "--horizon", "4",
    ];
    let a = psq(&args);
    let b = psq(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    // Round trip: parse, re-serialize, parse again; numbers stay bit-exact.
    let v1 = stdout_json(&a);
    let v2: Value = serde_json::from_str(&serde_json::to_string(&v1).unwrap()).unwrap();
    assert_eq!(v1, v2);
    let m = v1["results"][0]["value"].as_f64().unwrap();
    let m2 = v2["results"][0]["value"].as_f64().unwrap();
    assert_eq!(m.to_bits(), m2.to_bits());
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = std::env::temp_dir().join("psq-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let out = psq(&[
        "qlen", "--lambda", "0.5", "--dist", "exp:1", "--max-n", "3", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["command"], "qlen");
    assert_eq!(report["model"]["K"], 0);
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn lst_snaps_u_to_the_grid_and_reports_it() {
    let out = psq(&[
        "lst", "--lambda", "0.5", "--dist", "exp:1", "--u", "1.004", "--r", "0.5",
        "--grid-step", "0.01", "--horizon", "3",
    ]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let row = &report["results"][0];
    let u = row["u"].as_f64().unwrap();
    assert_eq!(u, 1.0, "u must snap to the nearest node, got {u}");
    // The requested value is still echoed in the controls.
    assert_eq!(report["controls"]["u"][0].as_f64().unwrap(), 1.004);
}

#[test]
fn validate_rejects_non_mixture_models() {
    let out = psq(&["validate", "--lambda", "0.5", "--dist", "exp:1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("probe mixture"), "stderr: {err}");
}

#[test]
fn validate_passes_and_reports_z_scores() {
    let out = psq(&[
        "validate", "--lambda", "0.5", "--dist", "mix:exp:1:1.0:0.1", "--K", "1",
        "--grid-step", "0.01", "--horizon", "8", "--departures", "20000", "--warmup", "2000",
        "--seed", "5", "--r", "0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = stdout_json(&out);
    let rows = report["results"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    for stem in ["moment", "variance", "lst", "qlen_pmf", "qlen_mean"] {
        for suffix in ["analytic", "estimate", "z"] {
            let want = format!("{stem}_{suffix}");
            assert!(names.contains(&want.as_str()), "missing {want} row");
        }
    }
    let pass_row = rows.iter().find(|r| r["name"] == "pass").unwrap();
    assert_eq!(pass_row["value"].as_f64().unwrap(), 1.0);
    for row in rows {
        if row["name"].as_str().unwrap().ends_with("_z") {
            assert!(row["value"].as_f64().unwrap() <= 3.0);
        }
    }
}

#[test]
fn simulate_reports_probe_and_queue_estimates() {
    let out = psq(&[
        "simulate", "--lambda", "0.5", "--dist", "mix:exp:1:1.0:0.1", "--departures", "20000",
        "--warmup", "2000", "--seed", "3", "--r", "0.5",
    ]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let rows = report["results"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    for want in ["probe_count", "probe_moment", "probe_variance", "lst", "qlen_pmf", "qlen_mean", "arrival_seen", "work_conservation_residual"] {
        assert!(names.contains(&want), "missing {want} row");
    }
    let residual = rows
        .iter()
        .find(|r| r["name"] == "work_conservation_residual")
        .unwrap()["value"]
        .as_f64()
        .unwrap();
    assert!(residual < 1e-9, "work conservation residual {residual}");
    assert!(report["diagnostics"]["iterations"].as_u64().unwrap() > 40_000);
}

#[test]
fn missing_required_flags_exit_with_usage_code() {
    let out = psq(&["moments", "--lambda", "0.5", "--dist", "exp:1"]);
    assert_eq!(out.status.code(), Some(2));
}
