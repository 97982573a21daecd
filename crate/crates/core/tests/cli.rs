use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_merinda");

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/lv_small.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
        ]);
    }
    let csv_a = fs::read(a.join("trajectory.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("trajectory.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("t,y1,y2\n"));
    assert_eq!(text.lines().count(), 401);
    let prov = json(&a.join("trajectory.provenance.json"));
    assert_eq!(prov["seed"], 7);
    assert_eq!(prov["rows"], 400);

    let c = dir.path().join("c");
    ok(&[
        "generate",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "8",
    ]);
    assert_eq!(json(&c.join("trajectory.provenance.json"))["seed"], 8);
}

#[test]
fn sindy_recovers_support_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario();
    let out = dir.path().to_str().unwrap();
    ok(&["generate", "--scenario", sc.to_str().unwrap(), "--out", out]);
    let data = dir.path().join("trajectory.csv");
    ok(&[
        "recover",
        "--scenario",
        sc.to_str().unwrap(),
        "--method",
        "sindy",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out,
    ]);
    let report = json(&dir.path().join("report_sindy.json"));
    assert_eq!(report["support_match"], true);
    assert!(report["coefficient_mse"].as_f64().unwrap() < 1e-4);
    let rec = report["reconstruction_mse"].as_f64().unwrap();
    assert!(rec < 1e-3 * report["baseline_reconstruction_mse"].as_f64().unwrap());
    assert_eq!(report["library"]["terms"].as_array().unwrap().len(), 6);
}

#[test]
fn merinda_with_zero_epochs_reports_initial_loss() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "recover",
        "--scenario",
        sc.to_str().unwrap(),
        "--method",
        "merinda",
        "--epochs",
        "0",
        "--out",
        out,
    ]);
    let report = json(&dir.path().join("report_merinda.json"));
    assert!(report["training"]["initial_loss"]
        .as_f64()
        .unwrap()
        .is_finite());
    assert!(report["coefficient_mse"].is_number());
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn recover_and_quantize_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let d = dir.path().join(tag);
        let o = d.to_str().unwrap();
        ok(&[
            "recover",
            "--scenario",
            sc.to_str().unwrap(),
            "--method",
            "merinda",
            "--out",
            o,
        ]);
        let ckpt = d.join("model.json");
        ok(&[
            "quantize-eval",
            "--scenario",
            sc.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            o,
        ]);
        outputs.push(d);
    }
    for f in [
        "report_merinda.json",
        "model.json",
        "quantize_eval_w8_f6.json",
    ] {
        assert_eq!(
            fs::read(outputs[0].join(f)).unwrap(),
            fs::read(outputs[1].join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn wide_format_tracks_float() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario();
    let o = dir.path().to_str().unwrap();
    ok(&[
        "recover",
        "--scenario",
        sc.to_str().unwrap(),
        "--method",
        "merinda",
        "--out",
        o,
    ]);
    let ckpt = dir.path().join("model.json");
    ok(&[
        "quantize-eval",
        "--scenario",
        sc.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        o,
        "--format",
        "Q8.23/32",
    ]);
    let report = json(&dir.path().join("quantize_eval_w32_f23.json"));
    assert!(report["max_abs_deviation"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn exit_codes() {
    let sc = scenario();
    let sc = sc.to_str().unwrap();
    assert_eq!(
        run(&["recover", "--scenario", sc, "--method", "lasso"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "quantize-eval",
        "--scenario",
        sc,
        "--checkpoint",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(&["generate", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&[
        "quantize-eval",
        "--scenario",
        sc,
        "--checkpoint",
        "x",
        "--format",
        "Q9",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hwreport_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    let out = ok(&[
        "hwreport",
        "--fixture",
        "designs",
        "--out",
        o,
        "--format",
        "csv",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(
        fs::read_to_string(dir.path().join("hwreport.csv")).unwrap(),
        csv
    );
    assert!(csv.lines().nth(1).unwrap().starts_with("LTC,12014,"));

    let out = ok(&["hwreport", "--fixture", "mappings", "--out", o]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("s1D_s2L_s3L_s4D"));
    let csv = fs::read_to_string(dir.path().join("hwreport.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);

    let cfg = dir.path().join("pipe.json");
    let mut pipe = merinda::hwmodel::PipelineConfig::reference_template();
    pipe.stages[1].banks = 1;
    fs::write(&cfg, serde_json::to_string(&pipe).unwrap()).unwrap();
    let out = ok(&[
        "hwreport",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        o,
        "--format",
        "csv",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);

    fs::write(&cfg, "{\"name\":\"bad\"}").unwrap();
    assert_eq!(
        run(&["hwreport", "--config", cfg.to_str().unwrap(), "--out", o])
            .status
            .code(),
        Some(1)
    );
}
