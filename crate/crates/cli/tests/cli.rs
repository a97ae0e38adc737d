use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tomoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomoforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tomoforge(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "geometry": {"size": 32, "angles": 48},
  "method": {
    "tv": {"iterations": 20},
    "proposed": {"iterations": 4, "network": {"depth": 3, "width": 4}}
  },
  "benchmark": {"tv_lambdas": [0.01, 0.1]}
}"#;

fn simulate_small(dir: &Path, intensity: &str) {
    ok(&[
        "simulate",
        "--phantom",
        "shepp-logan",
        "--size",
        "32",
        "--angles",
        "48",
        "--intensity",
        intensity,
        "--seed",
        "7",
        "--out",
        p(dir),
    ]);
}

#[test]
fn simulate_writes_three_arrays_with_sidecars_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_small(&a, "1e4");
    simulate_small(&b, "1e4");
    for name in ["ground_truth", "counts", "sinogram"] {
        for ext in ["f32", "json"] {
            let file = format!("{name}.{ext}");
            let x = fs::read(a.join(&file)).unwrap();
            assert_eq!(x, fs::read(b.join(&file)).unwrap(), "{file}");
        }
    }
    assert_eq!(fs::read_dir(&a).unwrap().count(), 6);
    let sidecar = fs::read_to_string(a.join("sinogram.json")).unwrap();
    assert!(sidecar.contains("\"intensity\": 10000.0"));
}

#[test]
fn simulate_without_intensity_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tomoforge(&["simulate", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--intensity"), "{stderr}");
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn invalid_config_names_the_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"simulator": {"intensty": 1e4}}"#).unwrap();
    let out = tomoforge(&["simulate", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("simulator"), "{stderr}");
}

#[test]
fn reconstruct_and_evaluate_every_method() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate_small(&data, "1e4");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let sino = data.join("sinogram.f32");
    let truth = data.join("ground_truth.f32");
    let out = tmp.path().join("out");
    let common = ["--config", p(&cfg), "--sinogram", p(&sino), "--out", p(&out)];

    ok(&[&["reconstruct", "--method", "fbp"], &common[..]].concat());
    assert!(out.join("fbp.f32").exists());
    assert!(out.join("fbp_timing.json").exists());

    ok(&[
        &["reconstruct", "--method", "tv", "--lambda", "2.15e-7", "--iterations", "5"],
        &common[..],
    ]
    .concat());
    let tv_echo = fs::read_to_string(out.join("tv_config.json")).unwrap();
    assert!(tv_echo.contains("2.15e-7"), "{tv_echo}");

    ok(&[
        &["reconstruct", "--method", "proposed", "--ground-truth", p(&truth)],
        &common[..],
    ]
    .concat());
    let curves = fs::read_to_string(out.join("proposed_curves.csv")).unwrap();
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "iteration,loss,psnr,ssim");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').all(|f| !f.is_empty())));
    let echo = fs::read_to_string(out.join("proposed_config.json")).unwrap();
    assert!(echo.contains("best_psnr"), "{echo}");

    let csv = tmp.path().join("eval.csv");
    let row = ok(&[
        "evaluate",
        "--recon",
        p(&out.join("proposed.f32")),
        "--ground-truth",
        p(&truth),
        "--csv",
        p(&csv),
    ]);
    let stdout = String::from_utf8_lossy(&row.stdout);
    assert!(stdout.contains("proposed,1e4,"), "{stdout}");
    ok(&["evaluate", "--recon", p(&truth), "--ground-truth", p(&truth), "--method", "truth", "--csv", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "method,intensity,psnr_db,ssim");
    assert_eq!(lines.iter().filter(|l| l.starts_with("method,")).count(), 1);
    assert!(lines[2].starts_with("truth,1e4,inf,1"), "{}", lines[2]);
}

#[test]
fn evaluate_rejects_mismatched_dims_and_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_small(&a, "1e3");
    ok(&["simulate", "--size", "16", "--angles", "8", "--intensity", "1e3", "--out", p(&b)]);
    let out = tomoforge(&[
        "evaluate",
        "--recon",
        p(&a.join("ground_truth.f32")),
        "--ground-truth",
        p(&b.join("ground_truth.f32")),
    ]);
    assert!(!out.status.success());
    let out = tomoforge(&[
        "reconstruct",
        "--method",
        "fbp",
        "--sinogram",
        p(&tmp.path().join("missing.f32")),
        "--out",
        p(tmp.path()),
    ]);
    assert!(!out.status.success());
}

#[test]
fn benchmark_tabulates_every_cell_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["benchmark", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["benchmark", "--config", p(&cfg), "--out", p(&b)]);
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results, fs::read_to_string(b.join("results.csv")).unwrap());
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "phantom,method,intensity,psnr_db,ssim");
    assert_eq!(lines.len(), 10);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["failures"].as_array().unwrap().is_empty());
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.len() >= 9);
    for artifact in artifacts {
        assert!(a.join(artifact.as_str().unwrap()).exists(), "{artifact}");
    }
    assert!(artifacts
        .iter()
        .any(|x| x.as_str().unwrap().ends_with("proposed_curves.csv")));
}

#[test]
fn benchmark_failures_set_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"geometry": {"size": 32, "angles": 48},
            "benchmark": {"phantoms": ["no-such-phantom.f32"], "methods": ["fbp"]}}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = tomoforge(&["benchmark", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("no-such-phantom"));
}
