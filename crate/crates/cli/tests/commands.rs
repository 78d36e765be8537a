use std::path::Path;
use std::process::{Command, Output};

use plf_core::plfnet::{Checkpoint, PlfNetParams};
use plf_core::seeds::derive_seed;

fn plf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plf")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    ok(&plf(&[
        "synth",
        "--out",
        s(&corpus),
        "--healthy",
        "3",
        "--utterances-per-speaker",
        "2",
    ]));
    let manifest = corpus.join("manifest.csv");
    ok(&plf(&[
        "train",
        "--corpus",
        s(&manifest),
        "--out",
        s(&run),
        "--epochs",
        "2",
        "--seed",
        "4",
    ]));
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["command"], "train");
    assert_eq!(summary["seeds"]["master"], 4);
    assert_eq!(summary["seeds"]["init"], derive_seed(4, "init"));
    assert!(run.join("training_log.csv").is_file());

    let ckpt = run.join("checkpoint.plf");
    let extracted = dir.path().join("extracted");
    ok(&plf(&[
        "extract",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&manifest),
        "--out",
        s(&extracted),
    ]));
    assert!(std::fs::read_dir(extracted.join("logits")).unwrap().count() > 0);

    let per = dir.path().join("per.csv");
    ok(&plf(&[
        "per",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&manifest),
        "--out",
        s(&per),
    ]));
    let header = std::fs::read_to_string(&per).unwrap();
    assert!(header.starts_with("utterance_id,per,ins_rate,del_rate,sub_rate"));

    let hist = dir.path().join("hist.csv");
    ok(&plf(&[
        "histogram",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&manifest),
        "--out",
        s(&hist),
    ]));
    let first = std::fs::read_to_string(&hist).unwrap();
    assert_eq!(first.lines().next().unwrap().split(',').count(), 1 + 8 * 7);

    let corr = dir.path().join("analysis");
    ok(&plf(&[
        "analyze",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&manifest),
        "--out",
        s(&corr),
    ]));
    assert!(std::fs::read_to_string(corr.join("correlation.csv"))
        .unwrap()
        .starts_with("PLF,Mean r,Bin r,Bin label"));

    let cv = dir.path().join("cv");
    ok(&plf(&[
        "crossval",
        "--task",
        "intelligibility",
        "--corpus",
        s(&manifest),
        "--checkpoint",
        s(&ckpt),
        "--features",
        "both",
        "--folds",
        "3",
        "--out",
        s(&cv),
    ]));
    assert!(cv.join("results.csv").is_file());
    assert!(cv.join("audit.json").is_file());
}

#[test]
fn zero_epoch_checkpoint_holds_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    ok(&plf(&[
        "synth",
        "--out",
        s(&corpus),
        "--healthy",
        "1",
        "--utterances-per-speaker",
        "1",
    ]));
    ok(&plf(&[
        "train",
        "--corpus",
        s(&corpus.join("manifest.csv")),
        "--out",
        s(&run),
        "--epochs",
        "0",
        "--seed",
        "9",
    ]));
    let ckpt = Checkpoint::load(run.join("checkpoint.plf")).unwrap();
    let init = PlfNetParams::init(
        &ckpt.config.frontend,
        ckpt.spec.num_plfs(),
        ckpt.spec.num_phones(),
        derive_seed(9, "init"),
    )
    .unwrap();
    assert_eq!(ckpt.params, init);
}

#[test]
fn histogram_dataset_crossval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cv = dir.path().join("cv");
    ok(&plf(&[
        "synth",
        "--kind",
        "histogram",
        "--speakers",
        "80",
        "--out",
        s(&data),
    ]));
    ok(&plf(&[
        "crossval",
        "--task",
        "pathology",
        "--stratify",
        "--dataset",
        s(&data.join("manifest.csv")),
        "--out",
        s(&cv),
    ]));
    let summary = json(&cv.join("summary.json"));
    assert_eq!(summary["command"], "crossval");
    assert!(summary["inputs"][0]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn gradcheck_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    ok(&plf(&[
        "gradcheck",
        "--seed",
        "7",
        "--configurations",
        "20",
        "--out",
        s(&out),
    ]));
    assert!(out.is_file());
}

#[test]
fn exit_codes() {
    assert_eq!(plf(&["train", "--bogus"]).status.code(), Some(2));
    let missing = plf(&["train", "--corpus", "/nonexistent/manifest.csv", "--out", "/tmp/never"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/manifest.csv"));
    assert_eq!(
        plf(&["gradcheck", "--configurations", "3", "--tolerance", "0"])
            .status
            .code(),
        Some(1)
    );
}
