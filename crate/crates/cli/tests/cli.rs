use sitr_cli::output::{read_rows, write_rows, Artifact};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn sitr(args: &[&str]) -> Output {
    sitr_env(args, &[])
}

fn sitr_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sitr"));
    cmd.args(args).env_remove("ITR_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Writes an S1 sample and its design into `dir`.
fn s1_files(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("s1.csv");
    let design = dir.join("design.json");
    let n = n.to_string();
    stdout(&sitr(&[
        "generate",
        "--scenario",
        "S1",
        "--n",
        &n,
        "--seed",
        "11",
        "--out",
        data.to_str().unwrap(),
        "--design-out",
        design.to_str().unwrap(),
    ]));
    (data, design)
}

#[test]
fn simulate_is_byte_identical_across_runs_and_thread_counts() {
    let args = [
        "simulate", "--scenario", "S1", "--n", "200", "--reps", "5", "--seed", "7", "--kernel", "gaussian",
    ];
    let a = stdout(&sitr(&args));
    let b = stdout(&sitr(&args));
    assert_eq!(a, b);
    let serial = stdout(&sitr_env(&args, &[("ITR_THREADS", "1")]));
    let parallel = stdout(&sitr_env(&args, &[("ITR_THREADS", "3")]));
    assert_eq!(serial, parallel);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["reps"], 5);
    assert_eq!(v["seed"], 7);
}

#[test]
fn simulate_csv_has_table_header() {
    let out = stdout(&sitr(&[
        "simulate", "--scenario", "S1", "--n", "200", "--reps", "3", "--seed", "1", "--kernel", "gaussian", "--format",
        "csv",
    ]));
    assert!(out.starts_with("block,name,truth,Bias,SD,SE,CP,PCD,SD(PCD),VF,SD(VF)\n"));
    assert!(out.contains("coefficient,beta2,"));
}

#[test]
fn fit_pins_first_coordinate_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let (data, design) = s1_files(dir.path(), 300);
    let text = stdout(&sitr(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--kernel",
        "gaussian",
    ]));
    let artifact: Artifact = serde_json::from_str(&text).unwrap();
    assert_eq!(artifact.fit.beta[0], 1.0);
    assert!((artifact.fit.beta[1] + 1.0).abs() < 0.5, "{:?}", artifact.fit.beta);
    assert_eq!(artifact.curve.grid.len(), 101);
    assert_eq!(artifact.config.kernel.h_g, artifact.fit.kernel.h_g);
    assert_eq!(artifact.to_json().unwrap(), text);
}

#[test]
fn fit_with_bootstrap_reports_intervals_and_csv_round_trips() {
    let dir = TempDir::new().unwrap();
    let (data, design) = s1_files(dir.path(), 200);
    let csv = stdout(&sitr(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--boot",
        "20",
        "--seed",
        "3",
        "--format",
        "csv",
    ]));
    let rows = read_rows(&csv).unwrap();
    assert_eq!(write_rows(&rows).unwrap(), csv);
    let beta2 = rows.iter().find(|r| r.section == "beta" && r.name == "beta2").unwrap();
    let (lo, hi) = (beta2.lower.unwrap(), beta2.upper.unwrap());
    assert!(lo <= hi);
    assert_eq!(rows.iter().filter(|r| r.section == "curve").count(), 101);
}

#[test]
fn inline_design_and_explicit_columns() {
    let dir = TempDir::new().unwrap();
    let (data, _) = s1_files(dir.path(), 200);
    let text = stdout(&sitr(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--design",
        r#"{"kind":"binary","law":{"type":"constant_bernoulli","p":0.5}}"#,
        "--x-cols",
        "x2,x1",
        "--kernel",
        "gaussian",
    ]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["config"]["source"]["columns"]["x_cols"], serde_json::json!(["x2", "x1"]));
    assert_eq!(v["fit"]["beta"][0], 1.0);
}

#[test]
fn curve_and_permtest_emit_bands_on_the_grid() {
    let dir = TempDir::new().unwrap();
    let (data, design) = s1_files(dir.path(), 200);
    let common = ["--data", data.to_str().unwrap(), "--design", design.to_str().unwrap(), "--kernel", "gaussian"];
    let mut args = vec!["curve", "--boot", "20", "--seed", "5"];
    args.extend(common);
    let curve: Artifact = serde_json::from_str(&stdout(&sitr(&args))).unwrap();
    let band = curve.band.expect("curve writes a band");
    assert_eq!(band.grid, curve.curve.grid);
    assert_eq!(band.lower[0].len(), 101);

    let mut args = vec!["permtest", "--perm", "100", "--hold-beta", "--seed", "5"];
    args.extend(common);
    let perm: Artifact = serde_json::from_str(&stdout(&sitr(&args))).unwrap();
    let p = perm.permutation.expect("permtest writes a band");
    assert_eq!(p.band.upper_quantile_curve[0].len(), 101);
    assert!(p.band.hold_beta);
    assert_eq!(perm.config.perm, Some(100));
}

#[test]
fn stochastic_commands_need_a_seed() {
    let o = sitr(&["fit", "--scenario", "S1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[config]"));
    assert_eq!(code(&sitr(&["simulate", "--scenario", "S1"])), 2);
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&sitr(&["fit"])), 2);
    assert_eq!(code(&sitr(&["fit", "--scenario", "S1", "--data", "x.csv", "--seed", "1"])), 2);
    assert_eq!(code(&sitr(&["fit", "--scenario", "S9", "--seed", "1"])), 2);
    let o = sitr_env(&["fit", "--scenario", "S1", "--seed", "1"], &[("ITR_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn data_errors_exit_with_data_code() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,x2,z,y\n0.1,0.2,1,0.5\n0.3,0.1,2,0.4\n").unwrap();
    let o = sitr(&[
        "fit",
        "--data",
        bad.to_str().unwrap(),
        "--design",
        r#"{"kind":"binary","law":{"type":"constant_bernoulli","p":0.5}}"#,
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error[schema]"));
}

#[test]
fn missing_files_exit_with_io_code() {
    let o = sitr(&[
        "fit",
        "--data",
        "/nonexistent/data.csv",
        "--design",
        r#"{"kind":"binary","law":{"type":"constant_bernoulli","p":0.5}}"#,
    ]);
    assert_eq!(code(&o), 5);
}

#[test]
fn singular_fits_exit_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    let (data, design) = s1_files(dir.path(), 100);
    let o = sitr(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--hg",
        "1e-9",
        "--trim",
        "0",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn output_file_is_written_and_wall_time_goes_to_stderr() {
    let dir = TempDir::new().unwrap();
    let (data, design) = s1_files(dir.path(), 200);
    let out = dir.path().join("fit.json");
    let o = sitr(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout(&o).is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("wall time"));
    let artifact: Artifact = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(artifact.config.command, "fit");
}
