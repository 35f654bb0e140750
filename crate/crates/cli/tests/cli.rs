use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn capver(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capver"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut all = args.to_vec();
    all.extend(["--format", "json"]);
    let out = capver(&all);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let value = serde_json::from_str(&text)
        .unwrap_or_else(|e| panic!("not json ({e}): {text}\nstderr: {}", String::from_utf8_lossy(&out.stderr)));
    (code(&out), value)
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_example() {
    let (c, v) = json(&["solve", "--n", "3", "--m", "2", "--k", "1", "--dist", "uniform"]);
    assert_eq!(c, 0);
    assert!((num(&v["phi_star"]) - 0.34764).abs() < 1e-4);
    assert!((num(&v["payoff"]) - 1.223).abs() < 1e-3);
    assert!((num(&v["baselines"]["first_best"]) - 1.25).abs() < 1e-9);
    assert_eq!(v["partition"]["case"], "IcAudAllo");
}

#[test]
fn solve_text_reports_cutoffs_and_baselines() {
    let out = capver(&["solve"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["phi*:", "gamma1:", "gamma2:", "gamma3:", "case:", "payoff:", "first best:", "foc residual:"] {
        assert!(text.contains(key), "missing {key} in\n{text}");
    }
    assert!(text.contains("0.347644"));
}

#[test]
fn solve_rejects_k_equal_m() {
    let out = capver(&["solve", "--n", "3", "--m", "2", "--k", "2"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k < m"));
    assert!(out.stdout.is_empty());
}

#[test]
fn solve_power_two() {
    let (c, v) = json(&["solve", "--n", "10", "--m", "5", "--k", "2", "--dist", "power:2"]);
    assert_eq!(c, 0);
    let phi = num(&v["phi_star"]);
    assert!((0.3..=0.5).contains(&phi), "phi* = {phi}");
}

#[test]
fn bad_distribution_is_a_validation_error() {
    assert_eq!(code(&capver(&["solve", "--dist", "beta:2"])), 1);
    assert_eq!(code(&capver(&["solve", "--dist", "power:-1"])), 1);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&capver(&["frobnicate"])), 1);
    assert_eq!(code(&capver(&["check"])), 1);
    assert_eq!(code(&capver(&["--help"])), 0);
}

#[test]
fn solve_csv_has_header_and_twelve_digits() {
    let out = capver(&["solve", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("n,m,k,dist,phi_star,payoff,case"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[4], "3.47644426880e-1");
}

#[test]
fn identical_runs_are_byte_identical() {
    let a = capver(&["solve", "--format", "json"]);
    let b = capver(&["solve", "--format", "json"]);
    assert_eq!(a.stdout, b.stdout);
    let sim = ["simulate", "--trials", "5000", "--lottery-trials", "65536", "--audit-trials", "65536", "--seed", "7", "--format", "csv", "--threads", "2"];
    let a = capver(&sim);
    let b = capver(&sim);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());
}

#[test]
fn simulate_zero_trials() {
    let (c, v) = json(&["simulate", "--trials", "0"]);
    assert_eq!(c, 0);
    assert_eq!(v["trials"], 0);
    assert_eq!(v["capacity_violations"], 0);
}

#[test]
fn simulate_small_run_matches_payoff() {
    let (c, v) = json(&[
        "simulate", "--trials", "200000", "--lottery-trials", "1048576", "--audit-trials", "4194304", "--seed", "3",
    ]);
    assert_eq!(c, 0, "{v}");
    assert_eq!(v["capacity_violations"], 0);
    assert!((num(&v["payoff_hat"]) - 1.223).abs() < 0.01);
}

#[test]
fn simulate_failed_band_exits_two() {
    // Demanding every bin sit within a near-zero band cannot pass.
    let out = capver(&[
        "simulate", "--trials", "20000", "--lottery-trials", "65536", "--audit-trials", "65536", "--band", "1e-6",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_rejects_phi_outside_range() {
    assert_eq!(code(&capver(&["simulate", "--phi", "0.9", "--trials", "0"])), 1);
}

#[test]
fn epic_witness() {
    let (c, v) = json(&["simulate", "--epic-witness"]);
    assert_eq!(c, 0);
    assert!(num(&v["escape_probability"]) >= num(&v["escape_bound"]));
    assert!((num(&v["escape_bound"]) - 0.5).abs() < 1e-15);
    assert_eq!(num(&v["truthful_allocation"]), 0.0);
    assert_eq!(v["profile"].as_array().unwrap().len(), 3);
}

#[test]
fn check_bundled_footnote() {
    let (c, v) = json(&["check", "--bundled", "footnote"]);
    assert_eq!(c, 2);
    assert_eq!(v["feasible"], false);
    assert_eq!(v["violation"]["set"]["members"], serde_json::json!([[0], [1]]));
    assert!((num(&v["violation"]["lhs"]) - 0.375).abs() < 1e-12);
    assert!((num(&v["violation"]["rhs"]) - 0.25).abs() < 1e-12);

    let (c, v) = json(&["check", "--bundled", "footnote", "--upper-sets-only"]);
    assert_eq!(c, 0);
    assert_eq!(v["passed"], true);
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn check_files() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "inst.json",
        r#"{"agents": [{"types": [0, 1], "masses": [0.5, 0.5]}, {"types": [0, 1], "masses": [0.5, 0.5]}],
            "capacity": {"default": 1}}"#,
    );
    let zero = write(dir.path(), "zero.json", r#"{"interim": [[0, 0], [0, 0]]}"#);
    let (c, v) = json(&["check", "--instance", &inst, "--rule", &zero]);
    assert_eq!(c, 0);
    assert_eq!(v["feasible"], true);

    let half = write(dir.path(), "half.json", r#"{"interim": [[0.25, 0.75], [0.25, 0.75]]}"#);
    let (c, v) = json(&["check", "--instance", &inst, "--rule", &half]);
    assert_eq!(c, 0);
    assert!(num(&v["marginal_error"]) < 1e-9);
    let total: f64 = v["expost"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| num(&row["probability"]) * row["allocation"].as_array().unwrap().iter().map(num).sum::<f64>())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);

    let too_much = write(dir.path(), "over.json", r#"{"interim": [[1, 1], [1, 1]]}"#);
    assert_eq!(code(&capver(&["check", "--instance", &inst, "--rule", &too_much])), 2);

    let broken = write(dir.path(), "broken.json", r#"{"agents": [}"#);
    assert_eq!(code(&capver(&["check", "--instance", &broken, "--rule", &zero])), 1);
    let wrong_shape = write(dir.path(), "shape.json", r#"{"interim": [[0, 0]]}"#);
    assert_eq!(code(&capver(&["check", "--instance", &inst, "--rule", &wrong_shape])), 1);
    assert_eq!(code(&capver(&["check", "--instance", "/nonexistent", "--rule", &zero])), 1);
}

#[test]
fn plot_data_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("plots");
    let out = capver(&["plot-data", "--grid", "101", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let (header, rows) = read_csv(&out_dir.join("envelope.csv"));
    assert_eq!(header, ["q", "c_allo", "c_aud", "c_ic", "envelope"]);
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0][4], 2.0);
    assert_eq!(rows[100][4], 0.0);
    let (_, solved) = json(&["solve"]);
    let gamma1 = num(&solved["partition"]["gamma1"]);
    for r in rows.iter().filter(|r| r[0] <= gamma1) {
        assert!((r[4] - r[3]).abs() < 1e-10, "q = {}", r[0]);
    }
    for r in &rows {
        assert!(r[4] <= r[1].min(r[2]).min(r[3]) + 1e-10);
    }

    let (header, rows) = read_csv(&out_dir.join("interim.csv"));
    assert_eq!(header, ["t", "p", "a"]);
    let phi = num(&solved["phi_star"]);
    assert!((rows[0][1] - phi).abs() < 1e-10);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1] - 1e-12));
}

#[test]
fn plot_data_first_and_last_rows_for_other_instance() {
    let (c, v) = json(&["plot-data", "--n", "7", "--m", "4", "--k", "2", "--dist", "power:0.5", "--grid", "11"]);
    assert_eq!(c, 0);
    let env = v["envelope"].as_array().unwrap();
    assert_eq!(num(&env[0]["envelope"]), 4.0);
    assert_eq!(num(&env[10]["envelope"]), 0.0);
}

#[test]
fn sweep_single_row_matches_solve() {
    let (c, rows) = json(&["sweep", "--ks", "1"]);
    assert_eq!(c, 0);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    let (_, solved) = json(&["solve"]);
    assert_eq!(rows[0]["report"], solved);
}

#[test]
fn sweep_payoff_rises_with_audits() {
    let (c, rows) = json(&["sweep", "--ns", "6", "--ms", "4", "--dists", "uniform;power:2"]);
    assert_eq!(c, 0);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for dist in ["uniform", "power:2"] {
        let payoffs: Vec<f64> = rows
            .iter()
            .filter(|r| r["dist"] == dist)
            .map(|r| num(&r["report"]["payoff"]))
            .collect();
        assert_eq!(payoffs.len(), 3);
        assert!(payoffs.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{dist}: {payoffs:?}");
    }
}

#[test]
fn sweep_marks_invalid_cells() {
    let (c, rows) = json(&["sweep", "--ks", "1..2"]);
    assert_eq!(c, 0);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows[0]["ok"], true);
    assert_eq!(rows[1]["ok"], false);
    assert!(rows[1]["error"].as_str().unwrap().contains("k < m"));
    assert_eq!(code(&capver(&["sweep", "--ks", "one"])), 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"n": 10, "m": 5, "k": 2, "dist": "power:2", "format": "json"}"#);
    let out = capver(&["solve", "--config", &cfg]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["instance"]["n"], 10);
    assert_eq!(v["instance"]["dist"]["alpha"], 2.0);

    let out = capver(&["solve", "--config", &cfg, "--k", "3"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["instance"]["k"], 3);

    let bad = write(dir.path(), "bad.json", r#"{"agents": 3}"#);
    assert_eq!(code(&capver(&["solve", "--config", &bad])), 1);
}

#[test]
fn out_file_receives_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solve.json");
    let out = capver(&["solve", "--format", "json", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!((num(&v["phi_star"]) - 0.34764).abs() < 1e-4);
}
