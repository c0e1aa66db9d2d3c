//! Black-box tests of the `rext` binary: exit codes, stream discipline,
//! determinism, and the full fixture walkthrough.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn rext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rext")).args(args).output().expect("binary runs")
}

fn corpus_args(dir: &Path) -> Vec<String> {
    let _ = dir;
    vec![
        "--abstracts".into(),
        fixture("abstracts.tsv").display().to_string(),
        "--entities".into(),
        fixture("entities.tsv").display().to_string(),
        "--relations".into(),
        fixture("relations.tsv").display().to_string(),
    ]
}

#[test]
fn stats_prints_counts_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["stats".to_string()];
    args.extend(corpus_args(dir.path()));
    let out = rext(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("documents: 5"));
    assert!(stdout.contains("positive relations: 5"));
    assert!(stdout.contains("INHIBITOR: 2"));
}

#[test]
fn missing_file_exits_nonzero_naming_the_path() {
    let out = rext(&[
        "stats",
        "--abstracts",
        "/no/such/abstracts.tsv",
        "--entities",
        "/no/such/entities.tsv",
        "--relations",
        "/no/such/relations.tsv",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("/no/such/abstracts.tsv"), "{stderr}");
}

#[test]
fn preprocess_is_deterministic_and_reports_skips() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.tsv");
    let out_b = dir.path().join("b.tsv");
    for out_path in [&out_a, &out_b] {
        let mut args = vec!["preprocess".to_string()];
        args.extend(corpus_args(dir.path()));
        args.push("--out".into());
        args.push(out_path.display().to_string());
        let out = rext(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(out.status.success());
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert!(stderr.contains("cross-sentence skipped: 1"), "{stderr}");
        assert!(stderr.contains("rare-label pairs dropped: 1"), "{stderr}");
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "bogus_key=1\n").unwrap();
    let mut args = vec!["stats".to_string(), "--config".into(), cfg.display().to_string()];
    args.extend(corpus_args(dir.path()));
    let out = rext(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("bogus_key"), "{stderr}");
}

#[test]
fn full_walkthrough_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let examples = dir.path().join("examples.tsv");
    let vocab = dir.path().join("vocab.txt");
    let ckpt = dir.path().join("model.rext");
    let preds = dir.path().join("preds.tsv");
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "hidden=32\nlayers=4\nattention_heads=4\nff_dim=64\nhead_dim=16\nmax_len=64\n\
         epochs=40\nbatch_size=4\nlearning_rate=0.0003\ndropout=0.1\nseed=7\n",
    )
    .unwrap();

    let mut args = vec!["preprocess".to_string()];
    args.extend(corpus_args(dir.path()));
    args.push("--out".into());
    args.push(examples.display().to_string());
    assert!(rext(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.success());

    let out = rext(&[
        "build-vocab",
        "--examples",
        &examples.display().to_string(),
        "--out",
        &vocab.display().to_string(),
    ]);
    assert!(out.status.success());

    let out = rext(&[
        "train",
        "--config",
        &cfg.display().to_string(),
        "--examples",
        &examples.display().to_string(),
        "--vocab",
        &vocab.display().to_string(),
        "--out",
        &ckpt.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = rext(&[
        "predict",
        "--checkpoint",
        &ckpt.display().to_string(),
        "--examples",
        &examples.display().to_string(),
        "--out",
        &preds.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = rext(&[
        "evaluate",
        "--pred",
        &preds.display().to_string(),
        "--gold",
        &fixture("relations.tsv").display().to_string(),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Relation\tP\tR\tF1"), "{stdout}");
    assert!(stdout.contains("Global results across all interactions types"), "{stdout}");
    // a memorizing run recovers both same-sentence INHIBITOR tuples
    assert!(stdout.contains("INHIBITOR\t1.00\t1.00\t1.00"), "{stdout}");
}

#[test]
fn predict_runs_from_raw_corpus_paths() {
    let dir = tempfile::tempdir().unwrap();
    let examples = dir.path().join("examples.tsv");
    let vocab = dir.path().join("vocab.txt");
    let ckpt = dir.path().join("model.rext");
    let preds = dir.path().join("preds.tsv");

    let mut args = vec!["preprocess".to_string()];
    args.extend(corpus_args(dir.path()));
    args.push("--out".into());
    args.push(examples.display().to_string());
    assert!(rext(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
    assert!(rext(&[
        "build-vocab",
        "--examples",
        &examples.display().to_string(),
        "--out",
        &vocab.display().to_string(),
    ])
    .status
    .success());
    let out = rext(&[
        "train",
        "--examples",
        &examples.display().to_string(),
        "--vocab",
        &vocab.display().to_string(),
        "--out",
        &ckpt.display().to_string(),
        "--hidden",
        "16",
        "--layers",
        "4",
        "--attention-heads",
        "2",
        "--ff-dim",
        "32",
        "--head-dim",
        "8",
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--max-len",
        "64",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = rext(&[
        "predict",
        "--checkpoint",
        &ckpt.display().to_string(),
        "--abstracts",
        &fixture("abstracts.tsv").display().to_string(),
        "--entities",
        &fixture("entities.tsv").display().to_string(),
        "--out",
        &preds.display().to_string(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr).unwrap();
    // without gold annotations nothing is rare-dropped: all 7 same-sentence
    // non-overlapping pairs become candidates
    assert!(stderr.contains("generated 7 candidate examples"), "{stderr}");
}
