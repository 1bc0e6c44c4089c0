//! End-to-end checks of the command-line surface.

use std::process::Command;

fn pdt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdt"))
}

#[test]
fn phantom_writes_field_files() {
    let dir = tempfile::tempdir().unwrap();
    let status = pdt()
        .args(["phantom", "--name", "bump", "--grid", "17"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["sigma.json", "sigma.bin", "log_sigma.bin", "sigma.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn synthesize_then_reload_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let status = pdt()
        .args([
            "synthesize",
            "--phantom",
            "layered_exp",
            "--grid",
            "17",
            "--alpha",
            "1.0",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let bundle = pdt_core::forward::DataBundle::load(dir.path()).unwrap();
    assert_eq!(bundle.grid.nx, 17);
    assert_eq!(bundle.alpha, 1.0);
}

#[test]
fn reconstruct_prints_report_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let output = pdt()
        .args([
            "reconstruct",
            "--phantom",
            "constant",
            "--grid",
            "33",
            "--alpha",
            "0.5",
            "--method",
            "elliptic",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("err_logsigma_linf"));
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn invalid_method_alpha_combination_fails_with_stage() {
    let output = pdt()
        .args([
            "reconstruct",
            "--phantom",
            "constant",
            "--grid",
            "17",
            "--alpha",
            "0.5",
            "--method",
            "algebraic2d",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("error in stage"), "stderr: {err}");
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"phantom":"constant","grid":17,"alpha":0.5,"method":"elliptic","oops":1}"#,
    )
    .unwrap();
    let output = pdt()
        .args(["reconstruct", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn converge_emits_csv_and_gnuplot() {
    let dir = tempfile::tempdir().unwrap();
    let output = pdt()
        .args([
            "converge",
            "--phantom",
            "layered_exp",
            "--grid",
            "17",
            "--alpha",
            "1.0",
            "--method",
            "ode_s",
            "--grids",
            "9,17,33",
            "--emit-gnuplot",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{:?}", output);
    assert!(dir.path().join("convergence.csv").exists());
    assert!(dir.path().join("convergence.gp").exists());
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.lines().count() >= 4);
    assert!(csv.contains("config_hash"));
}

#[test]
fn diagnose_reports_residuals() {
    let output = pdt()
        .args([
            "diagnose",
            "--phantom",
            "layered_exp",
            "--grid",
            "17",
            "--alpha",
            "0.5",
            "--refined-grid",
            "33",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("curl_f"));
    assert!(text.contains("alpha_half"));
}
