use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ar_multistep::cli::read_series;
use ar_multistep::montecarlo::{simulate, Innovation};
use ar_multistep::selection::select_predictor;
use ar_multistep::ArModel;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ar-multistep"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn theory_report_for_vanishing_weight_model() {
    let v = json(&run(&["theory", "--coeffs", "0.9,-0.81", "--h", "3", "--k-max", "4"]));
    let r = &v["result"];
    assert_eq!(r["p_h"], 1);
    assert_eq!(r["f1"][0], Value::Null);
    let ratio = r["direct_to_plugin_ratio"].as_f64().unwrap();
    assert!((ratio - 0.667).abs() < 5e-4, "{ratio}");
    assert_eq!(r["optimal_set"], serde_json::json!([[1, "direct"]]));
    assert_eq!(v["config"]["h"], 3);
}

#[test]
fn theory_at_horizon_one_counts_parameters() {
    let v = json(&run(&[
        "theory", "--coeffs", "0.5,-0.3", "--sigma2", "2", "--h", "1", "--k-max", "5",
    ]));
    for k in 2..=5 {
        let want = 2.0 * k as f64;
        for col in ["f1", "f2"] {
            let got = v["result"][col][k - 1].as_f64().unwrap();
            assert!((got - want).abs() < 1e-9, "{col}({k}) = {got}");
        }
    }
}

#[test]
fn invalid_model_is_a_validation_error() {
    let out = run(&["theory", "--coeffs", "1.2,0.5", "--h", "2", "--k-max", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stationary"));
    let out = run(&["theory", "--coeffs", "0.5", "--h", "2", "--k-max", "3", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_requires_seed_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(
        run(&["simulate", "--coeffs", "0.5", "--n", "20", "--out", a.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    for p in [&a, &b] {
        let out = run(&[
            "simulate",
            "--coeffs",
            "0.9,-0.81",
            "--n",
            "300",
            "--seed",
            "5",
            "--with-eps",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("index,x,eps\n"));
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["result"]["seed"], 5);
    assert_eq!(sidecar["result"]["burn_in"], 500);
}

#[test]
fn zero_variance_writes_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.csv");
    let out = run(&[
        "simulate",
        "--coeffs",
        "0.9,-0.81",
        "--sigma2",
        "0",
        "--n",
        "50",
        "--seed",
        "1",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (s, _) = read_series(&p).unwrap();
    assert!(s.values().iter().all(|v| *v == 0.0));
}

#[test]
fn round_trip_selection_is_bit_identical() {
    let model = ArModel::new(vec![0.6, -0.36], 1.0).unwrap();
    let path = simulate(&model, 400, 500, 77, Innovation::Normal).unwrap();
    let direct = select_predictor(&path.series, 3, 4).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let out = run(&[
        "simulate",
        "--coeffs",
        "0.6,-0.36",
        "--n",
        "400",
        "--seed",
        "77",
        "--with-eps",
        "--out",
        p.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let (loaded, eps) = read_series(&p).unwrap();
    assert_eq!(loaded, path.series);
    assert_eq!(eps.unwrap(), path.innovations);
    assert_eq!(select_predictor(&loaded, 3, 4).unwrap(), direct);

    let v = json(&run(&[
        "select",
        "--input",
        p.to_str().unwrap(),
        "--h",
        "3",
        "--k-max",
        "4",
    ]));
    let ape: Vec<f64> = direct.audit.candidates.iter().map(|c| c.ape_direct).collect();
    let reported: Vec<f64> = v["result"]["selection"]["audit"]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["ape_direct"].as_f64().unwrap())
        .collect();
    assert_eq!(ape, reported);
}

#[test]
fn golden_sample_path() {
    let expected: Value =
        serde_json::from_str(&std::fs::read_to_string(data("ar2_h3_seed2017.expected.json")).unwrap()).unwrap();
    let input = data("ar2_h3_seed2017.csv");
    let v = json(&run(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "3",
        "--k-max",
        "4",
    ]));
    let sel = &v["result"]["selection"];
    assert_eq!(sel["chosen"], expected["chosen"]);
    assert_eq!(sel["method"], expected["method"]);
    let f = v["result"]["forecast"].as_f64().unwrap();
    assert!((f - expected["forecast"].as_f64().unwrap()).abs() < 1e-10);
    for key in ["one_step_direct", "direct", "plugin"] {
        assert!(sel["audit"][key].is_u64(), "{key}");
    }
}

#[test]
fn horizon_one_reports_direct() {
    let input = data("ar2_h3_seed2017.csv");
    let v = json(&run(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "1",
        "--k-max",
        "4",
    ]));
    assert_eq!(v["result"]["selection"]["method"], "direct");
}

#[test]
fn subset_cap_and_short_series() {
    let input = data("ar2_h3_seed2017.csv");
    let out = run(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "3",
        "--k-max",
        "13",
        "--subset",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap of 12"));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.csv");
    std::fs::write(&p, "index,x\n1,0.5\n2,-0.1\n3,0.3\n4,0.2\n").unwrap();
    let out = run(&["select", "--input", p.to_str().unwrap(), "--h", "3", "--k-max", "2"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(&p, "index,x\n1,abc\n").unwrap();
    let out = run(&["select", "--input", p.to_str().unwrap(), "--h", "1", "--k-max", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subset_selection_reports_mask() {
    let input = data("ar2_h3_seed2017.csv");
    let v = json(&run(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "3",
        "--k-max",
        "3",
        "--subset",
    ]));
    let mask = v["result"]["selection"]["chosen"].as_str().unwrap();
    assert_eq!(mask.len(), 3);
    assert!(mask.chars().all(|c| c == '0' || c == '1'));
}

#[test]
fn bic_reports_order() {
    let input = data("ar2_h3_seed2017.csv");
    let v = json(&run(&[
        "bic",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "3",
        "--k-max",
        "4",
    ]));
    assert_eq!(v["result"]["order"], 1);
    assert_eq!(v["result"]["criteria"].as_array().unwrap().len(), 4);
}

#[test]
fn table1_check_exit_code_matches_report() {
    let out = run(&[
        "replicate-table1",
        "--n",
        "150",
        "--reps",
        "200",
        "--seed",
        "3",
        "--check",
    ]);
    let code = out.status.code().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let passed = v["result"]["passed"].as_bool().unwrap();
    assert_eq!(code, if passed { 0 } else { 4 });
    assert_eq!(v["result"]["table"]["rows"].as_array().unwrap().len(), 4);

    let out = run(&[
        "replicate-table1",
        "--n",
        "150",
        "--reps",
        "50",
        "--seed",
        "3",
        "--format",
        "csv",
        "--sequential",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("a1,a2,"));
}

#[test]
fn mspe_methods_agree_at_horizon_one() {
    let base = [
        "mspe",
        "--coeffs",
        "0.9,-0.81",
        "--h",
        "1",
        "--lags",
        "1,2",
        "--n",
        "80",
        "--reps",
        "40",
        "--seed",
        "9",
    ];
    let mut p = base.to_vec();
    p.extend(["--method", "plug-in"]);
    let mut d = base.to_vec();
    d.extend(["--method", "direct"]);
    let a = json(&run(&p));
    let b = json(&run(&d));
    assert_eq!(a["result"]["mean"], b["result"]["mean"]);
}
