use std::path::Path;
use std::process::Command;

use bloch_frames::io::Container;
use serde_json::Value;

fn run(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_bloch-frames")).args(args).output().expect("spawn cli");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn chern_band_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    run(&["model", "build", "--preset", "two-band", "--mu", "1", "--out", s(&model)]);

    let frame_dir = dir.path().join("frame");
    run(&["frame", "construct", "--mode", "parseval", "--model", s(&model), "--grid", "16", "--out", s(&frame_dir)]);
    let side = json(&frame_dir.join("family.json"));
    assert_eq!(side["rank"], 1);
    assert_eq!(side["ambient_dim"], 2);
    let cert = json(&frame_dir.join("certificate.json"));
    let chern: Vec<i64> = cert["invariants"]["chern"].as_object().unwrap().values().map(|v| v.as_i64().unwrap()).collect();
    assert_eq!(chern.iter().map(|c| c.abs()).sum::<i64>(), 1);
    assert!(cert["invariants"]["defects"]["frame_operator"].as_f64().unwrap() < 1e-8);
    let frame = Container::load(&frame_dir.join("frame.bfc")).unwrap();
    assert_eq!(frame.grid_axes, 2);
    assert_eq!(frame.sizes[..2], [16, 16]);
    assert!(frame_dir.join("frame.csv").exists());

    let sub = dir.path().join("sub");
    run(&["frame", "construct", "--mode", "subframe", "--model", s(&model), "--grid", "16", "--out", s(&sub)]);
    assert!(sub.join("certificate.json").exists());

    let emit = dir.path().join("emit");
    run(&["wannier", "emit", "--model", s(&model), "--grid", "16", "--out", s(&emit)]);
    assert!(Container::load(&emit.join("wannier.bfc")).unwrap().data.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    assert!(emit.join("decay.json").exists());

    let interp = dir.path().join("interp");
    run(&["bands", "interpolate", "--model", s(&model), "--coarse", "8", "--fine", "32", "--out", s(&interp)]);
    assert!(std::fs::read_to_string(interp.join("bands.csv")).unwrap().lines().count() > 32 * 32);
    assert!(interp.join("interpolation.json").exists());
}

#[test]
fn trivial_basis_has_zero_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    run(&["model", "build", "--preset", "two-band", "--mu", "3", "--out", s(&model)]);
    let out = dir.path().join("basis");
    run(&["frame", "construct", "--mode", "basis", "--model", s(&model), "--grid", "16", "--out", s(&out)]);
    let cert = json(&out.join("certificate.json"));
    assert!(cert["invariants"]["chern"].as_object().unwrap().values().all(|v| v.as_i64() == Some(0)));
    assert!(cert["invariants"]["defects"]["orthonormality"].as_f64().unwrap() < 1e-8);
}

#[test]
fn bands_scan_and_butterfly() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("square.json");
    run(&["model", "build", "--preset", "square", "--flux", "1/3", "--out", s(&model)]);
    let csv = dir.path().join("bands.csv");
    let stdout = run(&["bands", "scan", "--model", s(&model), "--grid", "12", "--out", s(&csv)]);
    let summary: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["ranges"].as_array().unwrap().len(), 3);
    assert!(csv.exists());

    let fly = dir.path().join("fly.csv");
    run(&["butterfly", "--q-max", "4", "--nk", "4", "--out", s(&fly)]);
    let text = std::fs::read_to_string(&fly).unwrap();
    assert!(text.starts_with("p,q,flux,energy"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 4));
}

#[test]
fn rejects_bad_flux() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bloch-frames"))
        .args(["model", "build", "--preset", "square", "--flux", "1/0", "--out", s(&dir.path().join("m.json"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
