use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn sosdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosdec")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_nhc_passes_on_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = sosdec(&["check-nhc", "--config", path(&fixture("f1")), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("nhc.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(!csv.contains("fail_"));
}

#[test]
fn misdeclared_dimension_exits_one() {
    let out = sosdec(&["check-nhc", "--config", path(&fixture("f1_points"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("fail_rank"));
}

#[test]
fn missing_config_exits_two() {
    let out = sosdec(&["check-nhc", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ \"dim\": 2, \"function\": \"x1^2 +\" }").unwrap();
    let out = sosdec(&["check-nhc", "--config", path(&cfg)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn quartic_decompose_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = sosdec(&["decompose", "--config", path(&fixture("quartic")), "--out", path(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("fail_rank"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn decompose_then_verify_round_trips() {
    for name in ["f2", "f4"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(name);
        let out = sosdec(&["decompose", "--config", path(&cfg), "--out", path(dir.path())]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let manifest = dir.path().join("manifest.json");
        let report = dir.path().join("report");
        let out = sosdec(&[
            "verify",
            "--config",
            path(&cfg),
            "--manifest",
            path(&manifest),
            "--out",
            path(&report),
        ]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stdout));
        assert!(report.join("verify.txt").exists());
        assert!(report.join("verify.csv").exists());
    }
}

#[test]
fn verify_rejects_a_foreign_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sosdec(&["decompose", "--config", path(&fixture("f2")), "--out", path(dir.path())]);
    assert_eq!(code(&out), 0);
    let out = sosdec(&[
        "verify",
        "--config",
        path(&fixture("f4")),
        "--manifest",
        path(&dir.path().join("manifest.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_grid_writes_one_csv_per_piece() {
    let dir = tempfile::tempdir().unwrap();
    let out = sosdec(&[
        "eval-grid",
        "--config",
        path(&fixture("f2")),
        "--out",
        path(dir.path()),
        "--grid",
        "x1:-1:1:5,x2:-1:1:3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pieces = dir.path().join("pieces");
    let n = std::fs::read_dir(&pieces).unwrap().count();
    assert_eq!(n, 3);
    let csv = std::fs::read_to_string(pieces.join("piece_000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 15);
}
