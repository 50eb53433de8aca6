use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn finsent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finsent")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = finsent(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Ingests the bundled sample and splits it 45/45; returns the split directory.
fn prepared(root: &Path) -> PathBuf {
    ok(&["ingest", "--sample", "--out", &p(&root.join("ingest"))]);
    let split = root.join("split");
    ok(&[
        "split",
        "--input",
        &p(&root.join("ingest/corpus.csv")),
        "--train",
        "45",
        "--test",
        "45",
        "--out",
        &p(&split),
    ]);
    split
}

#[test]
fn oracle_predictions_evaluate_to_perfect_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let split = prepared(tmp.path());
    let test = p(&split.join("test.csv"));
    ok(&["predict", "--input", &test, "--backend", "oracle", "--out", &p(&tmp.path().join("pred"))]);
    let json = ok(&[
        "--json",
        "evaluate",
        "--gold",
        &test,
        "--predictions",
        &p(&tmp.path().join("pred/predictions.csv")),
        "--out",
        &p(&tmp.path().join("eval")),
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["accuracy"], 1.0);
    assert_eq!(v["macro_avg"]["f1"], 1.0);
    let confusion = fs::read_to_string(tmp.path().join("eval/confusion.csv")).unwrap();
    assert!(confusion.contains("positive,15,0,0"), "{confusion}");
}

#[test]
fn unparseable_backend_scores_zero_and_counts_no_label() {
    let tmp = tempfile::tempdir().unwrap();
    let split = prepared(tmp.path());
    let test = p(&split.join("test.csv"));
    ok(&["predict", "--input", &test, "--backend", "unparseable", "--out", &p(&tmp.path().join("pred"))]);
    let json = ok(&[
        "--json",
        "evaluate",
        "--gold",
        &test,
        "--predictions",
        &p(&tmp.path().join("pred/predictions.csv")),
        "--out",
        &p(&tmp.path().join("eval")),
    ]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["accuracy"], 0.0);
    assert_eq!(v["no_label"], 45);
}

#[test]
fn split_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = prepared(&tmp.path().join("a"));
    let b = prepared(&tmp.path().join("b"));
    for name in ["train.csv", "test.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["split"], 42);
    assert_eq!(manifest["inputs"][0]["name"], "corpus.csv");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn pipeline_through_peft_encoder_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let split = prepared(root);
    let d = |s: &str| p(&root.join(s));
    ok(&["augment", "--input", &p(&split.join("train.csv")), "--out", &d("augment")]);
    ok(&["analyze", "--input", &p(&split.join("train.csv")), "--top-k", "5", "--out", &d("analyze")]);
    ok(&[
        "featurize",
        "--input",
        &d("augment/augmented.csv"),
        "--apply",
        &p(&split.join("test.csv")),
        "--out",
        &d("featurize"),
    ]);
    ok(&[
        "train-encoder",
        "--train",
        &d("augment/augmented.csv"),
        "--eval",
        &p(&split.join("test.csv")),
        "--peft",
        "--merged",
        "--epochs",
        "2",
        "--grad-accum-steps",
        "2",
        "--lr",
        "5e-3",
        "--out",
        &d("encoder"),
    ]);
    ok(&[
        "predict",
        "--input",
        &p(&split.join("test.csv")),
        "--model",
        &d("encoder/encoder.json"),
        "--out",
        &d("predict"),
    ]);
    ok(&[
        "evaluate",
        "--gold",
        &p(&split.join("test.csv")),
        "--predictions",
        &d("predict/predictions.csv"),
        "--out",
        &d("evaluate"),
    ]);
    let table = ok(&["compare", "--report", &format!("peft={}", d("evaluate/report.json")), "--out", &d("compare")]);
    assert!(table.contains("peft"));

    for (dir, files) in [
        ("augment", &["augmented.csv"][..]),
        ("analyze", &["figure_data.json", "class_distribution.json", "correlations.csv", "keywords.csv"]),
        ("featurize", &["vocabulary.json", "tfidf_augmented.csv", "tfidf_test.csv"]),
        ("encoder", &["encoder.json", "encoder_merged.json", "trace.csv"]),
        ("predict", &["predictions.csv"]),
        ("evaluate", &["report.json", "confusion.csv", "report.txt"]),
        ("compare", &["comparison.txt", "comparison.json"]),
    ] {
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(root.join(dir).join("manifest.json")).unwrap()).unwrap();
        for f in files {
            assert!(root.join(dir).join(f).is_file(), "{dir}/{f}");
            let listed = manifest["outputs"].as_array().unwrap().iter().any(|e| e["name"] == *f);
            assert!(listed, "{dir}/manifest.json lacks {f}");
        }
    }
    // Two epochs of ceil(90 / 2) steps each, plus the header.
    let trace = fs::read_to_string(root.join("encoder/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2 * 45);
    assert!(trace.starts_with("step,epoch,lr,loss,train_acc,val_loss,val_acc"));
}

#[test]
fn config_file_supplies_output_dir_and_split_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 7\n[paths]\noutput_dir = \"runs\"\n[split]\ntrain = 30\ntest = 30\n").unwrap();
    ok(&["--config", &p(&cfg), "ingest", "--sample"]);
    let corpus = tmp.path().join("runs/ingest/corpus.csv");
    let json = ok(&["--config", &p(&cfg), "--json", "split", "--input", &p(&corpus), "--test", "15"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["train"]["positive"], 10);
    assert_eq!(v["test"]["neutral"], 5);
    let manifest = fs::read_to_string(tmp.path().join("runs/split/manifest.json")).unwrap();
    assert!(manifest.contains("\"split\": 7"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[split]\ntrian = 3\n").unwrap();
    let out = finsent(&["--config", &p(&cfg), "ingest", "--sample", "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    fs::write(&cfg, "[paths]\nlexicon = \"missing.txt\"\n").unwrap();
    let out = finsent(&["--config", &p(&cfg), "ingest", "--sample", "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = finsent(&["ingest", "--sample", "--format", "xml", "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = finsent(&["ingest", "--sample"]);
    assert_eq!(out.status.code(), Some(2), "no output directory");
    let out = finsent(&["split", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = finsent(&["split", "--input", &p(&tmp.path().join("nope.csv")), "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "sentiment,headline\nbullish,Shares jumped\n").unwrap();
    let out = finsent(&["split", "--input", &p(&bad), "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));

    let split = prepared(tmp.path());
    let out = finsent(&[
        "split",
        "--input",
        &p(&split.join("test.csv")),
        "--train",
        "300",
        "--test",
        "300",
        "--out",
        &p(&tmp.path().join("x")),
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn unreachable_backend_exits_with_4_and_keeps_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let split = prepared(tmp.path());
    // A listener that is closed at once: connections are refused.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = tmp.path().join("http.toml");
    fs::write(
        &cfg,
        format!("[backend]\nkind = \"http\"\nattempts = 1\n[backend.http]\nurl = \"http://127.0.0.1:{port}/\"\ntimeout_secs = 2\n"),
    )
    .unwrap();
    let out_dir = tmp.path().join("pred");
    let out =
        finsent(&["--config", &p(&cfg), "predict", "--input", &p(&split.join("test.csv")), "--out", &p(&out_dir)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("predictions.csv").is_file());
    assert!(out_dir.join("manifest.json").is_file());
}
