use std::path::Path;
use std::process::{Command, Output};

fn dds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dds")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dds(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/canonical.toml").to_str().unwrap().to_owned()
}

#[test]
fn generate_run_evaluate_export() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, out) = (dir.path().join("scene"), dir.path().join("out"));
    ok(&["gen-scene", "--out", s(&scene), "--sigma", "0.05", "--cameras", "4", "--seed", "2"]);
    assert!(scene.join("views/003.features.ddsf").is_file());
    assert!(!scene.join("views/004.features.ddsf").exists());

    ok(&["run", "--config", &config(), "--scene", s(&scene), "--out", s(&out), "--method", "gft"]);
    let table = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(table.contains("GFT") || table.contains("gft"), "{table}");

    let json = dir.path().join("m.json");
    let printed = ok(&["eval", "--scene", s(&scene), "--labeling", s(&out.join("labeling.json")), "--json", s(&json)]);
    assert!(printed.contains("road"));
    assert!(json.is_file());

    let png = dir.path().join("bev.png");
    ok(&["export-bev", "--scene", s(&scene), "--labeling", s(&out.join("labeling.json")), "--out", s(&png), "--mode", "clusters", "--pixel-size", "0.2"]);
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");
}

#[test]
fn staged_run_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, out) = (dir.path().join("scene"), dir.path().join("out"));
    ok(&["gen-scene", "--out", s(&scene), "--cameras", "3"]);
    ok(&["run", "--config", &config(), "--scene", s(&scene), "--out", s(&out), "--stage", "superpoints"]);
    assert!(out.join("superpoints.ddss").is_file());
    assert!(!out.join("diffused.ddsm").exists());
    ok(&["run", "--config", &config(), "--scene", s(&scene), "--out", s(&out), "--resume"]);
    assert!(out.join("labeling.json").is_file());
}

#[test]
fn tools_report_and_write() {
    let printed = ok(&["distill-check", "--instances", "5", "--max-n", "20", "--max-m", "4", "--max-c", "6"]);
    assert!(printed.starts_with("5 instances"));
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&["--threads", "1", "bench-diffusion", "--sizes", "16,32", "--channels", "4", "--repeats", "1", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("N_s,method,seconds\n16,iterative,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dds(&["run", "--scene", s(&dir.path().join("missing")), "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(dds(&["run", "--bogus"]).status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[vote]\neta = 3.0\n").unwrap();
    assert_eq!(dds(&["run", "--config", s(&bad)]).status.code(), Some(2));

    // A malformed scene fails at run time with the stage code.
    let scene = dir.path().join("scene");
    ok(&["gen-scene", "--out", s(&scene), "--cameras", "2"]);
    std::fs::write(scene.join("views/000.features.ddsf"), b"DDSF").unwrap();
    let out = dds(&["run", "--config", &config(), "--scene", s(&scene), "--out", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
