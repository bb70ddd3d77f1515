use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trialmatch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trialmatch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 8] = [
    "--n-patients",
    "20",
    "--n-trials",
    "4",
    "--n-criteria",
    "16",
    "--target-pairs",
    "320",
];

fn generate(dir: &Path, out: &str) -> Output {
    let mut args = vec!["generate", "--seed", "7", "--out", out];
    args.extend(SMALL);
    trialmatch(&args, dir)
}

#[test]
fn generate_twice_gives_identical_corpora() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(generate(tmp.path(), "a").status.code(), Some(0));
    assert_eq!(generate(tmp.path(), "b").status.code(), Some(0));
    for f in [
        "patients.jsonl",
        "trials.jsonl",
        "pairs.jsonl",
        "difficulty.json",
    ] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["n_patients"], 20);
}

#[test]
fn missing_pairs_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = trialmatch(
        &["train", "--pairs", "missing/pairs.jsonl", "--out", "ckpt"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing/pairs.jsonl"));
}

#[test]
fn unknown_subcommand_and_flag_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        trialmatch(&["frobnicate"], tmp.path()).status.code(),
        Some(1)
    );
    let out = trialmatch(&["generate", "--out", "x", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(generate(tmp.path(), "c").status.code(), Some(0));
    // a file where the output directory should go
    fs::write(tmp.path().join("blocked"), "").unwrap();
    let out = trialmatch(
        &["train", "--corpus", "c", "--out", "blocked/ckpt"],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_produces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(generate(dir, "corpus").status.code(), Some(0));
    let aug = trialmatch(
        &[
            "augment", "--corpus", "corpus", "--method", "llm", "--seed", "7", "--out", "aug",
        ],
        dir,
    );
    assert_eq!(
        aug.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&aug.stderr)
    );
    fs::write(
        dir.join("train.toml"),
        "[loss]\nalpha = 0.5\n[train]\nepochs = 2\nlearning_rate = 0.003\n[encoder]\nembedding_dim = 32\nhighway_channels = 8\n",
    )
    .unwrap();
    let train = trialmatch(
        &[
            "train",
            "--corpus",
            "aug",
            "--config",
            "train.toml",
            "--out",
            "ckpt",
        ],
        dir,
    );
    assert_eq!(
        train.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    for f in [
        "model.ckpt",
        "history.jsonl",
        "timing.jsonl",
        "manifest.json",
    ] {
        assert!(dir.join("ckpt").join(f).is_file(), "{f}");
    }
    let eval = trialmatch(
        &[
            "evaluate",
            "--ckpt",
            "ckpt",
            "--corpus",
            "corpus",
            "--level",
            "both",
            "--semantics",
            "eligibility",
            "--out",
            "report.json",
        ],
        dir,
    );
    assert_eq!(
        eval.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    let rows = report.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        for key in [
            "level",
            "averaging",
            "precision",
            "recall",
            "f1",
            "n",
            "confusion",
        ] {
            assert!(row.get(key).is_some(), "missing {key}");
        }
    }
    assert!(dir.join("report.manifest.json").is_file());
    // every outbound prompt in the audit log is recorded
    let audit = fs::read_to_string(dir.join("aug/audit.jsonl")).unwrap();
    assert!(audit.lines().count() >= 16);
}

#[test]
fn bad_config_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(generate(tmp.path(), "c").status.code(), Some(0));
    fs::write(tmp.path().join("bad.toml"), "[train]\nepochz = 3\n").unwrap();
    let out = trialmatch(
        &[
            "train", "--corpus", "c", "--config", "bad.toml", "--out", "ckpt",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}
