use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spectrascope::dense::{save_csv, save_mtx};
use spectrascope::knockout::AttributionScatter;
use spectrascope::lanczos::SpectrumEstimate;
use spectrascope::Matrix;

fn spectrascope(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectrascope"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SPECTRASCOPE_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = spectrascope(out, args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn spectrum_of_spiked_matrix() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["spectrum", "--synthetic", "spiked:n=150,spikes=5,4,3", "--deflate", "3", "--nvec", "8", "--validate"],
    );
    assert_eq!(
        names(dir.path()),
        [
            "spectrum.csv",
            "spectrum.json",
            "spectrum.svg",
            "spectrum_outliers.csv",
            "spectrum_validation.json"
        ]
    );
    let est = SpectrumEstimate::load_json(&dir.path().join("spectrum.json")).unwrap();
    assert_eq!(est.m, 128);
    assert_eq!(est.outliers.len(), 3);
    assert!((est.mass() - 1.0).abs() < 1e-2);
    let v = json(&dir.path().join("spectrum_validation.json"));
    assert!(v["outlier_max_abs_err"].as_f64().unwrap() < 1e-6);
    assert!(v["smoothed_l1"].as_f64().unwrap() < 0.3);

    let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(csv.starts_with("t,x,density_normalized,density\n"));
    assert_eq!(csv.lines().count(), 1 + 1024);
    let svg = fs::read_to_string(dir.path().join("spectrum.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn format_selects_files() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--format", "json", "spectrum", "--synthetic", "goe:n=40", "--M", "30"]);
    assert_eq!(names(dir.path()), ["spectrum.json"]);
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--format", "csv", "ccm-verify"]);
    assert_eq!(names(dir.path()), ["ccm_verify.csv"]);
}

#[test]
fn log_spectrum_uses_long_default() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--format", "json", "spectrum", "--synthetic", "pareto:p=60,n=120", "--log"]);
    let est = SpectrumEstimate::load_json(&dir.path().join("spectrum.json")).unwrap();
    assert!(est.log_mode);
    assert_eq!(est.m, 2048);
    assert_eq!(est.epsilon, Some(1e-5));
}

#[test]
fn ccm_verify_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["ccm-verify", "--D", "6", "--C", "3", "--alpha", "0.4", "--s", "9", "--monte-carlo", "2000"]);
    let v = json(&dir.path().join("ccm_verify.json"));
    assert!(v["max_abs_diff"].as_f64().unwrap() < 1e-10);
    assert_eq!(v["dense_eig"].as_array().unwrap().len(), 18);
    let p = &v["points"][0];
    assert_eq!(p["closed_form"]["top"]["multiplicity"], 3);
    assert!(p["monte_carlo"]["frobenius_rel_err"].as_f64().unwrap() < 0.2);

    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["ccm-verify", "--grid"]);
    let v = json(&dir.path().join("ccm_verify.json"));
    assert_eq!(v["points"].as_array().unwrap().len(), 48);
    assert!(v["max_abs_diff"].as_f64().unwrap() < 1e-10);
    assert!(!dir.path().join("ccm_verify.svg").exists());
}

#[test]
fn attribute_matrix_against_target() {
    let dir = tempfile::tempdir().unwrap();
    let d = 30;
    let mut spike = Matrix::zeros(d, d);
    spike[(0, 0)] = 50.0;
    spike[(1, 1)] = 40.0;
    let a = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 + 0.01 * i as f64 } else { 0.0 }) + &spike;
    save_mtx(&dir.path().join("a.mtx"), &a).unwrap();
    save_csv(&dir.path().join("b.csv"), &spike).unwrap();
    let (am, bm) = (dir.path().join("a.mtx"), dir.path().join("b.csv"));
    let out = dir.path().join("out");
    ok(
        &out,
        &[
            "attribute",
            "--matrix",
            am.to_str().unwrap(),
            "--target",
            bm.to_str().unwrap(),
            "--classes",
            "2",
            "--top-k",
            "10",
        ],
    );
    let scatter = AttributionScatter::load_csv(&out.join("attribute.csv")).unwrap();
    assert_eq!(scatter.len(), 10);
    assert_eq!(scatter.c, 2);
    let v = json(&out.join("attribute.json"));
    assert!((v["after_over_reference"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn train_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("train");
    ok(&t, &["train", "--synthetic", "ccm:d=10,c=3,n=10,t=3", "--widths", "16,16", "--epochs", "8"]);
    assert_eq!(
        names(&t),
        ["data.blk2", "train.json", "train.mlp", "train.svg", "train_metrics.csv"]
    );
    let metrics = fs::read_to_string(t.join("train_metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 8 * 3);
    let report = json(&t.join("train.json"));
    assert_eq!(report["dims"], serde_json::json!([10, 16, 16, 3]));

    let (mlp, data) = (t.join("train.mlp"), t.join("data.blk2"));
    let model = ["--mlp", mlp.to_str().unwrap(), "--data", data.to_str().unwrap()];

    let k = dir.path().join("kfac");
    ok(&k, &[&["kfac-compare"][..], &model].concat());
    let v = json(&k.join("kfac_compare.json"));
    assert_eq!(v["top_k"], 9);
    assert_eq!(v["layers"].as_array().unwrap().len(), 3);

    let d = dir.path().join("decompose");
    ok(&d, &[&["decompose", "--layer", "3", "--top", "5"][..], &model].concat());
    let v = json(&d.join("decompose.json"));
    assert!(v["reconstruction_error"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["parts"].as_array().unwrap().len(), 5);

    let s = dir.path().join("spectrum");
    ok(&s, &[&["spectrum", "--layer", "3", "--M", "40", "--validate"][..], &model].concat());
    let v = json(&s.join("spectrum_validation.json"));
    assert_eq!(v["dim"], 48);

    for q in ["H", "Delta", "W", "Hess", "E", "kfac"] {
        let out = dir.path().join(format!("q_{q}"));
        ok(
            &out,
            &[&["--format", "json", "spectrum", "--quantity", q, "--layer", "2", "--M", "20"][..], &model].concat(),
        );
    }

    let a = dir.path().join("attribute_w");
    ok(&a, &[&["attribute", "--quantity", "W", "--layer", "3"][..], &model].concat());
    assert_eq!(json(&a.join("attribute.json"))["top_k"], 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| spectrascope(dir.path(), args).status.code();

    assert_eq!(code(&["spectrum", "--synthetic", "wigner:n=5"]), Some(2));
    assert_eq!(code(&["spectrum"]), Some(2));
    assert_eq!(code(&["--threads", "0", "ccm-verify"]), Some(2));
    assert_eq!(code(&["ccm-verify", "--C", "1"]), Some(2));
    assert_eq!(code(&["decompose", "--synthetic", "goe:n=4"]), Some(2));

    let missing = dir.path().join("missing.mtx");
    assert_eq!(code(&["spectrum", "--matrix", missing.to_str().unwrap()]), Some(4));

    let zero = dir.path().join("zero.csv");
    save_csv(&zero, &Matrix::zeros(6, 6)).unwrap();
    assert_eq!(code(&["spectrum", "--matrix", zero.to_str().unwrap()]), Some(3));

    let o = Command::new(env!("CARGO_BIN_EXE_spectrascope"))
        .args(["--out", dir.path().to_str().unwrap(), "ccm-verify"])
        .env("SPECTRASCOPE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
