use std::path::Path;
use std::process::{Command, Output};

use sgear::eval::PredictionSet;

fn sgear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgear")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sgear(args);
    assert_eq!(code(&out), 0, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--classes",
        "5",
        "--frames",
        "3",
        "--dim",
        "8",
        "--tokens",
        "3",
        "--clips",
        "40",
        "--seed",
        "2",
    ]);
    let manifest = data.join("manifest.jsonl");
    assert!(manifest.exists());

    let config = root.join("run.json");
    std::fs::write(
        &config,
        r#"{"preset": "desk", "setting": "full", "train": {"epochs": 2, "warmup_epochs": 1}, "model": {"tca_blocks": 1}}"#,
    )
    .unwrap();
    let ckpt = root.join("model.ckpt");
    let log = root.join("epochs.csv");
    let stdout = ok(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&ckpt),
        "--log",
        s(&log),
        "--set",
        "train.seed=5",
    ]);
    assert!(stdout.contains("train top1"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);

    let eval_dir = root.join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(&eval_dir),
        "--tau",
        "1,2",
        "--ratio",
        "1,0.4",
    ]);
    for f in [
        "predictions.jsonl",
        "predictions.csv",
        "metrics.csv",
        "tau.csv",
        "ratio.csv",
    ] {
        assert!(eval_dir.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let analysis = root.join("analysis");
    let stdout = ok(&[
        "analyze",
        "--checkpoint",
        s(&ckpt),
        "--language",
        s(&data.join("language.sglp")),
        "--out",
        s(&analysis),
        "--nearest",
        "2",
    ]);
    assert!(stdout.starts_with("alignment "));
    for f in [
        "visual_similarity.csv",
        "language_similarity.csv",
        "nearest.csv",
        "alignment.csv",
        "visual.sglp",
    ] {
        assert!(analysis.join(f).exists(), "{f}");
    }

    let preds = eval_dir.join("predictions.jsonl");
    let fused = root.join("fused.jsonl");
    ok(&[
        "ensemble",
        "--input",
        &format!("a={}", s(&preds)),
        "--input",
        &format!("b={}", s(&preds)),
        "--weights",
        "1,3",
        "--out",
        s(&fused),
    ]);
    let (a, b) = (
        PredictionSet::read(&fused).unwrap(),
        PredictionSet::read(&preds).unwrap(),
    );
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!((&x.clip_id, x.target), (&y.clip_id, y.target));
        for (u, v) in x.scores.iter().zip(&y.scores) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--classes",
        "4",
        "--frames",
        "2",
        "--dim",
        "4",
        "--tokens",
        "2",
        "--clips",
        "8",
    ]);
    let manifest = data.join("manifest.jsonl");
    let ckpt = root.join("m.ckpt");

    let bad_setting = sgear(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&ckpt),
        "--set",
        "setting=9",
    ]);
    assert_eq!(code(&bad_setting), 2);
    let bad_key = sgear(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&ckpt),
        "--set",
        "train.colour=1",
    ]);
    assert_eq!(code(&bad_key), 2);
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("colour"));
    assert_eq!(code(&sgear(&["eval", "--frobnicate"])), 2);

    let missing = sgear(&[
        "eval",
        "--checkpoint",
        s(&root.join("none.ckpt")),
        "--manifest",
        s(&manifest),
        "--out",
        s(root),
    ]);
    assert_eq!(code(&missing), 3);

    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let garbage = sgear(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(root),
    ]);
    assert_eq!(code(&garbage), 3);
}
