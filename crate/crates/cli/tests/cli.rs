use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn alwnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alwnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn alwnn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = alwnn(args);
    assert_eq!(code(&out), 0, "alwnn {args:?} failed: {}", stderr(&out));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec![
        "synth", "--schemes", "BPSK,QPSK,FM", "--snr-min", "0", "--snr-max", "10", "--snr-step", "10",
        "--frames-per", "10", "--length", "64", "--seed", "7", "--out", p(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_requires_a_seed() {
    let dir = TempDir::new().unwrap();
    let out = alwnn(&["synth", "--out", p(&dir.path().join("d"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed"));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn synth_is_reproducible_and_protects_output() {
    let dir = TempDir::new().unwrap();
    let a = synth_small(dir.path(), &[]);
    for f in ["dataset.bin", "dataset.json", "manifest.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let again = alwnn(&["synth", "--seed", "7", "--out", p(&a)]);
    assert_eq!(code(&again), 1, "existing output must be refused");

    let b = dir.path().join("b");
    ok(&["replay", p(&a.join("manifest.json")), "--out", p(&b)]);
    assert_eq!(fs::read(a.join("dataset.bin")).unwrap(), fs::read(b.join("dataset.bin")).unwrap());
    assert_eq!(fs::read(a.join("dataset.json")).unwrap(), fs::read(b.join("dataset.json")).unwrap());

    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["snr_step"], 10);
    assert!(m["timestamp"].is_string());
}

#[test]
fn full_snr_grid_flag_example() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    ok(&[
        "synth", "--schemes", "BPSK", "--snr-min", "-20", "--snr-max", "18", "--snr-step", "2", "--frames-per", "1",
        "--length", "32", "--seed", "1", "--out", p(&out),
    ]);
    let meta = json(&out.join("dataset.json"));
    assert_eq!(meta["snr_grid"].as_array().unwrap().len(), 20);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(&cfg, r#"{"schemes": ["OOK", "FM"], "length": 32, "frames_per": 2, "snr_min": 0, "snr_max": 0, "seed": 3}"#)
        .unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--config", p(&cfg), "--length", "16", "--out", p(&out)]);
    let meta = json(&out.join("dataset.json"));
    assert_eq!(meta["length"], 16);
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["schemes"].as_array().unwrap().len(), 2);

    fs::write(&cfg, r#"{"lenght": 32}"#).unwrap();
    assert_eq!(code(&alwnn(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("e"))])), 1);
}

#[test]
fn untrained_model_is_at_chance_on_balanced_data() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("all");
    ok(&[
        "synth", "--snr-min", "-10", "--snr-max", "10", "--snr-step", "4", "--frames-per", "40", "--length", "128",
        "--seed", "11", "--out", p(&data),
    ]);
    let out = dir.path().join("eval");
    ok(&["eval", "--random-init", "5", "--data", p(&data), "--out", p(&out)]);
    let summary = json(&out.join("summary.json"));
    let acc = summary["accuracy"].as_f64().unwrap();
    assert!((acc - 1.0 / 11.0).abs() <= 0.05, "accuracy {acc}");
    assert_eq!(summary["frames"], 11 * 6 * 40);
    let snr_csv = fs::read_to_string(out.join("snr_accuracy.csv")).unwrap();
    assert_eq!(snr_csv.lines().next(), Some("snr_db,accuracy"));
    assert_eq!(snr_csv.lines().count(), 1 + 6);
    assert_eq!(fs::read_to_string(out.join("confusion.csv")).unwrap().lines().count(), 12);
}

#[test]
fn train_eval_replay_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path(), &[]);
    let run = dir.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&run), "--epochs", "2", "--batch-size", "8", "--seed", "3"]);
    for f in ["model.alwn", "train_log.csv", "split.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["config"]["levels"], 1, "default levels for short frames are materialised");
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.lines().any(|l| l == "epoch,train_loss,val_loss,val_acc,seconds"));

    let replayed = dir.path().join("run2");
    ok(&["replay", p(&run), "--out", p(&replayed)]);
    assert_eq!(fs::read(run.join("model.alwn")).unwrap(), fs::read(replayed.join("model.alwn")).unwrap());
    assert_eq!(fs::read(run.join("split.json")).unwrap(), fs::read(replayed.join("split.json")).unwrap());

    let ev = dir.path().join("eval");
    ok(&[
        "eval", "--model", p(&run.join("model.alwn")), "--data", p(&data), "--split", p(&run.join("split.json")),
        "--out", p(&ev),
    ]);
    let summary = json(&ev.join("summary.json"));
    assert_eq!(summary["frames"], 3 * 2 * 2, "test part is 20% of each 10-frame cell");
    let k = summary["kappa"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&k));
}

#[test]
fn missing_or_corrupt_inputs_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let out = alwnn(&["eval", "--random-init", "1", "--data", p(&dir.path().join("nope")), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);

    let data = synth_small(dir.path(), &[]);
    let bad = dir.path().join("bad.alwn");
    fs::write(&bad, b"ALWNgarbage").unwrap();
    let out = alwnn(&["eval", "--model", p(&bad), "--data", p(&data), "--out", p(&dir.path().join("o2"))]);
    assert_eq!(code(&out), 2);

    let out = alwnn(&["train", "--data", p(&data)]);
    assert_eq!(code(&out), 1, "missing --out is a usage error");
    let out = alwnn(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_passes_and_sabotage_exits_three() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["stem.dw2d.weight", "stem.pw1.weight", "level1.predict.dw.weight", "level1.update.pw.bias", "head.fc.weight"] {
        assert!(text.contains(name), "report lacks {name}:\n{text}");
    }
    assert!(text.contains("PASS"));

    let out = alwnn(&["gradcheck", "--sabotage"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

#[test]
fn complexity_and_bench_reports() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["complexity", "--length", "128", "--levels", "1", "--classes", "11", "--out", p(&dir.path().join("c"))]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("stem.pw1"));
    let csv = fs::read_to_string(dir.path().join("c/complexity.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("head.fc,1419,1408,")), "{csv}");

    let out = ok(&["bench", "--length", "32", "--batches", "2,4", "--repetitions", "1", "--out", p(&dir.path().join("b"))]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().next(), Some("batch,per_sample_seconds"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn meta_train_then_meta_eval_on_held_out_classes() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("pool");
    ok(&[
        "synth", "--snr-min", "10", "--snr-max", "10", "--frames-per", "12", "--length", "64", "--seed", "2",
        "--out", p(&data),
    ]);
    let enc = dir.path().join("enc");
    ok(&[
        "meta-train", "--data", p(&data), "--out", p(&enc), "--case", "C", "--length", "64", "--levels", "1",
        "--n-way", "3", "--k-shot", "2", "--q-query", "2", "--episodes", "3", "--seed", "1",
    ]);
    let log = fs::read_to_string(enc.join("episodes.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);

    let ev = dir.path().join("meta");
    ok(&[
        "meta-eval", "--model", p(&enc.join("encoder.alwn")), "--data", p(&data), "--out", p(&ev), "--case", "C",
        "--n-way", "3", "--k-shot", "2", "--q-query", "3", "--trials", "4",
    ]);
    let trials = fs::read_to_string(ev.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().next(), Some("trial,k_shot,n_way,snr_db,accuracy"));
    assert_eq!(trials.lines().count(), 1 + 4);
    let summary = json(&ev.join("summary.json"));
    assert_eq!(summary["n_way"], 3);

    // Meta-training classes are refused at evaluation time.
    let out = alwnn(&[
        "meta-eval", "--model", p(&enc.join("encoder.alwn")), "--data", p(&data), "--out", p(&dir.path().join("x")),
        "--n-way", "3", "--k-shot", "2", "--trials", "1",
    ]);
    assert_ne!(code(&out), 0);
}
