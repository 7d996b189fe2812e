use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_degwave"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.json");
    std::fs::write(
        &p,
        r#"{
  "domain": "pinched_annulus",
  "alpha": 0.5,
  "epsilons": [0.06, 0.03],
  "h_max": 0.2,
  "m": 8,
  "T": 8.0,
  "initial": { "y0": [{ "center": [0.0, 1.5], "radius": 0.4 }] },
  "seeds": [3],
  "observe": { "epsilon": 0.03, "t_grid": [4.0] },
  "identities": { "h_levels": [0.3, 0.2] }
}"#,
    )
    .unwrap();
    p
}

#[test]
fn unknown_command_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(&["explode", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_config_flag_is_usage_error() {
    assert_eq!(run(&["certify"]).status.code(), Some(2));
}

#[test]
fn invalid_config_names_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"domain":"pinched_annulus","alpha":2.0,"epsilons":[0.01,0.02],"h_max":0.1,"m":4,"T":8}"#).unwrap();
    let out = run(&["certify", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("CONFIG_INVALID") && err.contains("alpha") && err.contains("epsilons"), "{err}");
}

#[test]
fn convex_disk_certification_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("convex_disk.json");
    let out = run(&["certify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let cert = std::fs::read_to_string(dir.path().join("certify/certification.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&cert).unwrap();
    assert_eq!(v["pass"], false);
    let failed: Vec<&str> = v["clauses"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["clause"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"sign_condition_near_origin"), "{failed:?}");
    assert!(dir.path().join("MANIFEST").exists());
}

fn manifest(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("MANIFEST")).unwrap()
}

#[test]
fn all_is_bit_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run(&["all", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"]);
    let rb = run(&["all", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "3"]);
    assert_eq!(ra.status.code(), rb.status.code());
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma, mb);
    // every listed artifact exists and hashes as recorded
    for line in ma.lines() {
        let (rel, hash) = line.split_once(' ').unwrap();
        let bytes = std::fs::read(a.join(rel)).unwrap();
        assert_eq!(hash.len(), 64);
        assert_eq!(degwave::experiment::sha256_hex(&bytes), hash, "{rel}");
    }
    for stage in ["certify/", "spectrum/", "wave/", "identities/", "sweep/", "observe/"] {
        assert!(ma.lines().any(|l| l.starts_with(stage)), "{stage}");
    }
}

#[test]
fn separate_commands_match_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let all = dir.path().join("all");
    run(&["all", "--config", cfg.to_str().unwrap(), "--out", all.to_str().unwrap()]);
    let full = manifest(&all);
    for cmd in ["spectrum", "sweep"] {
        let d = dir.path().join(cmd);
        run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        for line in manifest(&d).lines().filter(|l| l.starts_with(&format!("{cmd}/"))) {
            assert!(full.lines().any(|f| f == line), "{line}");
        }
    }
}

#[test]
fn seed_flag_changes_only_randomized_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    run(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"]);
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(&a, "spectrum/eigenvalues.csv"), read(&b, "spectrum/eigenvalues.csv"));
    assert_ne!(read(&a, "spectrum/checks.json"), read(&b, "spectrum/checks.json"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let target = dir.path().join("from_env");
    let out = bin()
        .args(["certify", "--config", cfg.to_str().unwrap()])
        .env(degwave::experiment::OUTPUT_DIR_ENV, &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("MANIFEST").exists());
}

#[test]
fn observe_on_fixture_config_passes_at_t8() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fixture.json");
    let out = run(&["observe", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("observe/summary.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("8,")).expect("T = 8 row");
    assert!(row.ends_with(",PASS"), "{row}");
    let t4 = csv.lines().find(|l| l.starts_with("4,")).expect("T = 4 row");
    assert!(t4.ends_with(",INCONCLUSIVE"));
}
