use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{"m": 8, "N": 16, "spectrum": [4.0, 2.0], "train_pairs": 400, "eval_queries": 40,
    "steps": 50, "r": 2, "K": 4, "k_list": [1, 4], "beam_width": 4, "rq_stages": 2, "rq_base": 4}"#;

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("LAB_OUT_DIR")
        .output()
        .expect("spawn lab")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = setup();
    let out = lab(
        &["train", "--config", "tiny.json", "--set", "bogus=1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn bad_value_names_the_key() {
    let dir = setup();
    let out = lab(
        &["train", "--config", "tiny.json", "--set", "K=1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains('K'));
}

#[test]
fn train_then_eval_from_checkpoint() {
    let dir = setup();
    let out = lab(
        &[
            "train",
            "--config",
            "tiny.json",
            "--set",
            "paradigm=gr_codebook",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let checkpoint = dir.path().join("run/checkpoint.json");
    assert!(checkpoint.exists());
    let out = lab(
        &[
            "eval",
            "--config",
            "tiny.json",
            "--set",
            "paradigm=gr_codebook",
            "--checkpoint",
            "run/checkpoint.json",
            "--out",
            "ev",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("ev/report.json").exists());
}

#[test]
fn world_writes_docids_for_generative_runs() {
    let dir = setup();
    let out = lab(
        &[
            "world",
            "--config",
            "tiny.json",
            "--set",
            "paradigm=gr_text",
            "--out",
            "w",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("w/world.json").exists());
    assert!(dir.path().join("w/docids.json").exists());
}

#[test]
fn verify_on_defaults_passes() {
    let dir = setup();
    std::fs::write(dir.path().join("defaults.json"), "{}").unwrap();
    let out = lab(
        &["verify", "--config", "defaults.json", "--out", "v"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("v/report.json").exists());
}

#[test]
fn report_prints_checks() {
    let dir = setup();
    let cfg = r#"{"experiment": "negatives_sweep", "m": 8, "N": 16, "spectrum": [4.0, 2.0], "train_pairs": 400,
        "eval_queries": 40, "steps": 50, "r": 2, "k_list": [1, 4], "k_grid": [2, 4]}"#;
    std::fs::write(dir.path().join("sweep.json"), cfg).unwrap();
    let out = lab(
        &["sweep", "--config", "sweep.json", "--out", "s"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = lab(&["report", "--report", "s/report.json"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("negatives_sweep"));
}
