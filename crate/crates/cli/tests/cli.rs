use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use atme_cli::io::read_csv;
use atme_cli::CURVE_HEADER;
use atme_core::estimators::parallel_regression;
use atme_core::{BindOptions, EstimatorOptions, Roles};
use serde_json::Value;

fn atme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atme"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn roles() -> Roles {
    Roles::new("y", "t", "s").covariates(["x"])
}

const FOUR_ROWS: &str = "y,t,s,x,note\n1.5,0,0,0.1,a\n2.0,0,1,0.2,b\n3.25,1,0,0.3,c\n4.0,1,1,0.4,d\n";

/// Twelve rows with every (T, S) cell populated and a continuous covariate.
fn twelve_rows() -> String {
    let mut s = String::from("y,t,s,x,x_copy,g\n");
    for i in 0..12 {
        let t = i % 2;
        let sv = (i / 2) % 2;
        let x = (i as f64 * 0.7).sin();
        let y = 1.0 + t as f64 + 2.0 * sv as f64 + 3.0 * (t * sv) as f64 + x + (i as f64 * 1.3).cos() * 0.5;
        s += &format!("{y},{t},{sv},{x},{x},c{}\n", i / 3);
    }
    s
}

#[test]
fn reads_a_well_formed_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", FOUR_ROWS);
    let b = read_csv(&p, &roles(), BindOptions::default()).unwrap();
    assert_eq!(b.dataset.n(), 4);
    assert_eq!(b.dataset.y(), &[1.5, 2.0, 3.25, 4.0]);
    assert_eq!(b.dataset.t(), &[0, 0, 1, 1]);
}

#[test]
fn missing_outcome_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "outcome,t,s,x\n1,0,0,0\n");
    let err = read_csv(&p, &roles(), BindOptions::default()).unwrap_err();
    assert!(err.to_string().contains("`y`"), "{err}");
    let out = atme(&[
        "estimate",
        "--data",
        p.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`y`"));
}

#[test]
fn bad_cell_reports_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "y,t,s,x\n1,0,0,0\n2,1,1,zero\n");
    let err = read_csv(&p, &roles(), BindOptions::default()).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("`x`"), "{err}");
}

#[test]
fn blank_covariate_is_dropped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = twelve_rows();
    text += "5,1,1,,,c9\n";
    let p = write(dir.path(), "d.csv", &text);
    let b = read_csv(&p, &roles(), BindOptions { drop_missing: true }).unwrap();
    assert_eq!(b.dataset.n(), 12);
    assert_eq!(b.dropped_rows, vec![12]);
    assert!(read_csv(&p, &roles(), BindOptions::default()).is_err());

    let base = [
        "estimate",
        "--data",
        p.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
        "--covariates",
        "x",
    ];
    let out = atme(&[&base[..], &["--drop-missing"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: dropped 1 rows"));
    assert_eq!(atme(&base).status.code(), Some(2));
}

#[test]
fn estimate_json_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &twelve_rows());
    let out_path = dir.path().join("r.json");
    let out = atme(&[
        "estimate",
        "--data",
        p.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
        "--covariates",
        "x",
        "--method",
        "parallel-regression",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    for key in [
        "method",
        "estimate",
        "variance",
        "std_error",
        "ci_lower",
        "ci_upper",
        "level",
        "subset_components",
        "cell_counts",
        "diagnostics",
        "tool_version",
        "seed",
    ] {
        assert!(v.get(key).is_some(), "missing key {key}");
    }
    let ds = read_csv(&p, &roles(), BindOptions::default()).unwrap().dataset;
    let r = parallel_regression(&ds, &EstimatorOptions::default()).unwrap();
    let c = r.subset_components.unwrap();
    assert_eq!(v["method"], "parallel-regression");
    for (key, want) in [
        ("estimate", r.estimate),
        ("variance", r.variance),
        ("ci_lower", r.ci_lower),
        ("ci_upper", r.ci_upper),
    ] {
        assert_eq!(v[key].as_f64().unwrap().to_bits(), want.to_bits(), "{key}");
    }
    assert_eq!(
        v["subset_components"]["gamma1"].as_f64().unwrap().to_bits(),
        c.gamma1.to_bits()
    );
    assert_eq!(
        v["subset_components"]["var0"].as_f64().unwrap().to_bits(),
        c.var0.to_bits()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &twelve_rows());
    let data = p.to_str().unwrap();
    let roles = ["--outcome", "y", "--treatment", "t", "--moderator", "s"];
    // unknown flag and conflicting options
    assert_eq!(atme(&["estimate", "--nope"]).status.code(), Some(1));
    assert_eq!(
        atme(
            &[
                &["estimate", "--data", data][..],
                &roles,
                &["--method", "parallel-regression", "--bootstrap", "5"]
            ]
            .concat()
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        atme(
            &[
                &["estimate", "--data", data][..],
                &["--outcome", "y", "--treatment", "y", "--moderator", "s"]
            ]
            .concat()
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(atme(&["estimate", "--data", data]).status.code(), Some(1));
    assert_eq!(
        atme(&["sensitivity", "--data", data, "--alpha-grid", "1:0:1"])
            .status
            .code(),
        Some(1)
    );
    // unreadable file
    assert_eq!(
        atme(&[&["estimate", "--data", "/nonexistent/d.csv"][..], &roles].concat())
            .status
            .code(),
        Some(2)
    );
    // collinear covariates: numerical failure
    let out = atme(&[&["estimate", "--data", data][..], &roles, &["--covariates", "x,x_copy"]].concat());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x_copy"));
    assert_eq!(atme(&["--version"]).status.code(), Some(0));
}

#[test]
fn clustered_estimate_and_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &twelve_rows());
    let out = atme(&[
        "estimate",
        "--data",
        p.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
        "--covariates",
        "x",
        "--cluster",
        "g",
        "--format",
        "csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("method,estimate,variance,std_error"));
    assert!(lines.next().unwrap().starts_with("parallel-regression,"));
    assert!(lines.next().is_none());
}

#[test]
fn simulate_csv_has_one_row_per_estimator() {
    let out = atme(&[
        "simulate",
        "--n",
        "200",
        "--reps",
        "20",
        "--seed",
        "4",
        "--format",
        "csv",
        "--methods",
        "parallel-regression,controlled-interaction,propensity-weighting-oracle",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("estimator,replications,failures,mean_estimate,bias"));
    assert!(rows[3].starts_with("propensity-weighting-oracle,20,0,"));
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"command": "simulate", "n": 150, "reps": 10, "seed": 9, "methods": ["parallel-regression"], "delta": -1.0}"#,
    );
    let a = atme(&["simulate", "--config", cfg.to_str().unwrap()]);
    let b = atme(&[
        "simulate",
        "--n",
        "150",
        "--reps",
        "10",
        "--seed",
        "9",
        "--methods",
        "parallel-regression",
        "--delta",
        "-1",
    ]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    // a flag overrides the file
    let c = atme(&["simulate", "--config", cfg.to_str().unwrap(), "--delta", "3"]);
    let v: Value = serde_json::from_slice(&c.stdout).unwrap();
    assert_eq!(v["true_atme"], 3.0);
    let bad = write(dir.path(), "bad.json", r#"{"n": 10, "colour": "red"}"#);
    assert_eq!(
        atme(&["simulate", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn dgp_config_file_and_emitted_data() {
    let dir = tempfile::tempdir().unwrap();
    let kv = write(
        dir.path(),
        "dgp.txt",
        "delta = 1.0\nx_model = discrete -1,1 0.5,0.5\nn = 80\n",
    );
    let data = dir.path().join("d.csv");
    let out = atme(&[
        "simulate",
        "--dgp-config",
        kv.to_str().unwrap(),
        "--reps",
        "3",
        "--seed",
        "2",
        "--emit-data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["x_model"]["kind"], "discrete");
    let ds = read_csv(&data, &roles(), BindOptions::default()).unwrap().dataset;
    assert_eq!(ds.n(), 80);
    assert!(ds.x().iter().all(|&x| x == -1.0 || x == 1.0));
}

#[test]
fn level_curve_csv_header_contract() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let sim = atme(&[
        "simulate",
        "--n",
        "400",
        "--reps",
        "1",
        "--seed",
        "5",
        "--u-alpha",
        "1",
        "--u-kappa0",
        "-0.5",
        "--u-kappa1",
        "0.5",
        "--emit-data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("s.json").to_str().unwrap(),
    ]);
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    let out_path = dir.path().join("curve.csv");
    let out = atme(&[
        "sensitivity",
        "--data",
        data.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
        "--covariates",
        "x",
        "--fraction",
        "0.5",
        "--alpha-grid",
        "0.5:1.5:0.5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("alpha_tilde,kappa_diff,delta_adjusted,converged,residual")
    );
    assert_eq!(
        CURVE_HEADER.join(","),
        "alpha_tilde,kappa_diff,delta_adjusted,converged,residual"
    );
    assert!(lines.count() >= 1);
}

#[test]
fn diagnose_reports_instead_of_failing() {
    let dir = tempfile::tempdir().unwrap();
    // covariate equal to the moderator: separation in the support fit
    let mut text = String::from("y,t,s,z\n");
    for i in 0..16 {
        let s = u8::from(i % 4 < 2);
        text += &format!("{},{},{s},{s}\n", i as f64 * 0.5, i % 2);
    }
    let p = write(dir.path(), "d.csv", &text);
    let out = atme(&[
        "diagnose",
        "--data",
        p.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "t",
        "--moderator",
        "s",
        "--covariates",
        "z",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"], 16);
    assert_eq!(v["references"]["separation"], true);
    assert!(v.get("support").is_some() && v.get("balance").is_some());
    // the input is untouched
    assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
}
