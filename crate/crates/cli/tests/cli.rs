use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn perk(args: &[&str], workdir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perk"))
        .args(args)
        .arg("--workdir")
        .arg(workdir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("runs")
}

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic_200.tsv")
}

fn prepared(dir: &Path) -> PathBuf {
    let work = dir.join("w");
    let out = perk(&["prepare", "--data", data().to_str().unwrap()], &work);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for stage in ["train", "calibrate"] {
        assert!(perk(&[stage], &work).status.success());
    }
    work
}

#[test]
fn exact_cap_violation_is_a_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let work = prepared(dir.path());
    let config = dir.path().join("exact.toml");
    fs::write(&config, "mode = \"exact\"\nexact_cap = 150\nmeasures = [\"ndcg\"]\n").unwrap();
    let out = perk(&["recommend", "--config", config.to_str().unwrap()], &work);
    assert_eq!(out.status.code(), Some(2));
    let errors = fs::read_to_string(work.join("recommend_errors.tsv")).unwrap();
    assert!(errors.lines().filter(|l| !l.starts_with('#')).count() > 0);
    assert!(errors.contains("approx mode"));
}

#[test]
fn exact_mode_within_cap_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let work = prepared(dir.path());
    let out = perk(&["recommend", "--mode", "exact", "--measure", "f1,tp", "--K", "10"], &work);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = fs::read_to_string(work.join("recommendations_f1.tsv")).unwrap();
    let header = recs.lines().next().unwrap();
    assert!(header.starts_with("# config: {") && header.contains("\"mode\":\"exact\""));
    for line in recs.lines().filter(|l| !l.starts_with('#')) {
        let k: usize = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((1..=10).contains(&k));
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "K = 5\nbogus = 1\n").unwrap();
    let out = perk(&["prepare", "--config", config.to_str().unwrap()], &dir.path().join("w"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn invalid_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = perk(&["prepare", "--K", "0", "--data", data().to_str().unwrap()], &dir.path().join("w"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_stage_inputs_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = perk(&["calibrate"], &dir.path().join("empty"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("perk prepare"));
}

#[test]
fn imported_scores_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let work = prepared(dir.path());
    let config = dir.path().join("import.toml");
    let scores = work.join("scores.tsv");
    let copy = dir.path().join("external.tsv");
    fs::copy(&scores, &copy).unwrap();
    fs::write(&config, format!("[scorer]\nimport = {:?}\n", copy.to_str().unwrap())).unwrap();
    let before = fs::read_to_string(&scores).unwrap();
    assert!(perk(&["train", "--config", config.to_str().unwrap()], &work).status.success());
    let after = fs::read_to_string(&scores).unwrap();
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(body(&before), body(&after));
}

#[test]
fn global_scope_uses_one_map() {
    let dir = tempfile::tempdir().unwrap();
    let work = prepared(dir.path());
    let config = dir.path().join("global.toml");
    fs::write(&config, "measures = [\"pdcg\"]\n[calibration]\nscope = \"global\"\n").unwrap();
    let out = perk(&["evaluate", "--config", config.to_str().unwrap()], &work);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["calibration"]["scope"], "global");
    assert!(report["rows"].as_array().unwrap().iter().all(|r| r["measure"] == "pdcg"));
}
