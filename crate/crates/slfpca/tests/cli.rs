//! End-to-end subcommand behavior: flag validation, exit codes, file
//! formats, and the metrics conventions.

use std::path::Path;
use std::process::Command;

use nalgebra::DVector;
use slfpca::bspline::BSplineBasis;
use slfpca::simulation::{project_onto_basis, true_mean, TrueFpcs};
use slfpca::solver::SlfpcaModel;

const BIN: &str = env!("CARGO_BIN_EXE_slfpca");

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_dense_writes_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--case", "1", "--n", "200", "--design", "dense",
            "--seed", "7", "--out-data", "d.csv", "--out-truth", "t.json"],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 200 * 51, "header plus 10,200 observations");
    assert_eq!(lines[0], "subject,time,y");

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap())
            .unwrap();
    assert_eq!(truth["grid"].as_array().unwrap().len(), 501);
    assert_eq!(truth["phi"].as_array().unwrap().len(), 2);
    assert_eq!(truth["xi"].as_array().unwrap().len(), 200);
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["simulate", "--case", "1", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out-data"));

    let out = run_in(dir.path(), &["fit", "--data", "x.csv", "--p", "0",
        "--out-model", "m.json"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["fit", "--data", "missing.csv",
        "--out-model", "m.json"]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(dir.path().join("bad.csv"), "subject,time,y\ns1,3.0,2\n").unwrap();
    let out = run_in(dir.path(), &["fit", "--data", "bad.csv",
        "--out-model", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

fn simulate_small(dir: &Path) {
    let out = run_in(
        dir,
        &["simulate", "--case", "1", "--n", "40", "--design", "dense",
            "--seed", "3", "--out-data", "d.csv", "--out-truth", "t.json"],
    );
    assert!(out.status.success());
}

#[test]
fn fit_reports_sparseness_switch_and_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());

    let out = run_in(dir.path(), &["fit", "--data", "d.csv", "--lambda", "0",
        "--seed", "2", "--out-model", "m0.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sparseness: off"));

    let out = run_in(dir.path(), &["fit", "--data", "d.csv", "--lambda", "0.3",
        "--kappa-theta", "0.01", "--seed", "2", "--out-model", "m1.json",
        "--out-grid", "g.csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sparseness: on"));

    // Fitted components carry unit L2 norm.
    let (model, config, report) = SlfpcaModel::load_json(dir.path().join("m1.json")).unwrap();
    assert!(config.is_some());
    assert!(report.is_some());
    let grams = model.basis.grams();
    for k in 0..model.num_fpcs() {
        let row = model.fpc_coef.row(k).transpose();
        let norm = (&grams.mass * &row).dot(&row);
        assert!((norm - 1.0).abs() < 1e-8, "component {k} norm^2 = {norm}");
    }

    // The grid export covers the domain with the expected header.
    let grid = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next().unwrap(), "t,mu_hat,phi_1,phi_2");
    assert_eq!(grid.lines().count(), 1 + 501);
}

#[test]
fn tune_single_cell_table() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = run_in(dir.path(), &["tune", "--data", "d.csv",
        "--kappa-mu-grid", "1e-4", "--kappa-theta-grid", "1e-2",
        "--lambda-grid", "0", "--seed", "2", "--out-table", "tb.csv",
        "--out-best", "b.json", "--out-model", "m.json"]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("tb.csv")).unwrap();
    assert_eq!(table.lines().count(), 2, "header plus the single cell");
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.json")).unwrap())
            .unwrap();
    assert_eq!(best["lambda"], 0.0);
    assert_eq!(best["kappa_theta"], 1e-2);

    // Duplicate candidates are deduplicated with a warning.
    let out = run_in(dir.path(), &["tune", "--data", "d.csv",
        "--kappa-mu-grid", "1e-4", "--kappa-theta-grid", "1e-2,1e-2",
        "--lambda-grid", "0", "--seed", "2", "--out-table", "tb2.csv",
        "--out-best", "b2.json", "--out-model", "m2.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
    let table = std::fs::read_to_string(dir.path().join("tb2.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"case": 2, "n": 15, "seed": 4, "design": "sparse"}"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["--config", "cfg.json", "simulate",
        "--out-data", "a.csv", "--out-truth", "a.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("case 2"));

    // An explicit flag overrides the config value.
    let out = run_in(dir.path(), &["--config", "cfg.json", "simulate", "--case", "3",
        "--out-data", "b.csv", "--out-truth", "b.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("case 3"));
}

#[test]
fn metrics_scores_truth_coefficients_as_exact() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());

    // A model holding the exact truth: case-1 eigenfunctions live in the
    // basis, the mean is its least-squares projection.
    let basis = BSplineBasis::new(10.0, 9, 3).unwrap();
    let fpcs = TrueFpcs::new(1).unwrap();
    let model = SlfpcaModel {
        basis: basis.clone(),
        mean_coef: project_onto_basis(true_mean, &basis, 501).unwrap(),
        fpc_coef: fpcs.coefficients().unwrap().clone(),
        scores: nalgebra::DMatrix::zeros(40, 2),
        normalized: true,
    };
    model
        .save_json(dir.path().join("exact.json"), None, None)
        .unwrap();
    let out = run_in(dir.path(), &["metrics", "--model", "exact.json",
        "--truth", "t.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for line in text.lines().filter(|l| l.starts_with("phi_")) {
        let ise: f64 = line
            .split("ise ")
            .nth(1)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert!(ise < 1e-12, "exact model should score zero: {line}");
    }
    let ise_mu: f64 = text
        .lines()
        .find(|l| l.starts_with("ise_mu"))
        .unwrap()
        .split(": ")
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(ise_mu < 1e-6, "projected mean should be near-exact: {ise_mu}");

    // Sign-flipping a component changes nothing in the aligned metrics.
    let mut flipped = model.clone();
    flipped.fpc_coef.set_row(0, &(-model.fpc_coef.row(0)));
    let col: DVector<f64> = -flipped.scores.column(0).clone_owned();
    flipped.scores.set_column(0, &col);
    flipped
        .save_json(dir.path().join("flipped.json"), None, None)
        .unwrap();
    let out_flipped = run_in(dir.path(), &["metrics", "--model", "flipped.json",
        "--truth", "t.json"]);
    assert_eq!(out.stdout, out_flipped.stdout);
}

#[test]
fn metrics_rejects_mismatched_domains() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let basis = BSplineBasis::new(5.0, 9, 3).unwrap();
    let model = SlfpcaModel {
        basis: basis.clone(),
        mean_coef: nalgebra::DVector::zeros(13),
        fpc_coef: nalgebra::DMatrix::zeros(2, 13),
        scores: nalgebra::DMatrix::zeros(4, 2),
        normalized: true,
    };
    model
        .save_json(dir.path().join("short.json"), None, None)
        .unwrap();
    let out = run_in(dir.path(), &["metrics", "--model", "short.json",
        "--truth", "t.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}
