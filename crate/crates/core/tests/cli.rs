use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bertcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bertcnn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toy_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.cfg").to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus written through the CLI.
fn synth(dir: &Path) -> PathBuf {
    let out = dir.join("corpus.jsonl");
    let o = bertcnn(&[
        "synth",
        "--config",
        &toy_config(),
        "--set",
        "synth.sections=2",
        "--set",
        "synth.docs_per_class=10",
        "--output",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "60 records");
    assert!(dir.join("corpus.config.cfg").exists());
    out
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(bertcnn(&["--help"]).status.code(), Some(0));
    assert_eq!(bertcnn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bertcnn(&["train-hier", "--corpus", "x.jsonl"]).status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bertcnn(&["synth", "--set", "synth.colour=blue", "--output", s(&dir.path().join("c.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("synth.colour"));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bertcnn(&["train-flat", "--corpus", s(&dir.path().join("none.jsonl")), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn too_many_top_layers_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let o = bertcnn(&[
        "train-flat",
        "--config",
        &toy_config(),
        "--set",
        "n_top_layers=3",
        "--set",
        "epochs=1",
        "--corpus",
        s(&corpus),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn table2_check_prints_recomputed_values() {
    let o = bertcnn(&["eval", "--table2-check"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let bert = text.lines().find(|l| l.starts_with("BERT-CNN")).unwrap();
    assert!(bert.contains("acc_l2_avg 93.1 (93.0795; printed 93.1)"), "{bert}");
    assert!(bert.contains("acc_estimated 84.2 (84.2370;"), "{bert}");
    assert!(bert.contains("printed 84.3"), "{bert}");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn ingest_reads_the_csv_export() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("export.csv");
    std::fs::write(
        &csv,
        "申请号,摘要,专利分类\n\
         CN1,本实用新型公开了一种固体绝缘开关柜结构。,H02B13/035\n\
         CN2,一种农用播种装置。,A01C\n\
         CN3,,B65D\n\
         CN4,一种容器。,not-a-code\n",
    )
    .unwrap();
    let out = dir.path().join("corpus.jsonl");
    let o = bertcnn(&["ingest", "--input", s(&csv), "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(stats["accepted"], 2);
    assert_eq!(stats["rejected"], 2);
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["id"], "CN1");
}

#[test]
fn flat_training_predict_and_attention_export() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("flat");
    let o = bertcnn(&[
        "train-flat",
        "--config",
        &toy_config(),
        "--set",
        "epochs=2",
        "--corpus",
        s(&corpus),
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(summary["n_classes"], 6);
    assert_eq!(summary["n_train"].as_u64().unwrap() + summary["n_test"].as_u64().unwrap(), 60);
    assert!(run.join("config.cfg").exists());
    assert_eq!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 4);

    let o = bertcnn(&["predict", "--model", s(&run), "--text", "一种装置"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(p["label"].as_str().unwrap().len() == 3);

    let attn = dir.path().join("attn.json");
    let o = bertcnn(&[
        "export-attention",
        "--model",
        s(&run),
        "--text-a",
        "本实用新型",
        "--text-b",
        "它包括",
        "--output",
        s(&attn),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&attn).unwrap()).unwrap();
    let tokens = dump["tokens"].as_array().unwrap();
    assert_eq!(tokens.len(), 5 + 3 + 3);
    assert_eq!(tokens[0], "[CLS]");
    assert_eq!(dump["layers"].as_array().unwrap().len(), 2);
}

#[test]
fn hierarchical_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("hier");
    let o = bertcnn(&[
        "train-hier",
        "--config",
        &toy_config(),
        "--set",
        "model=cnn",
        "--corpus",
        s(&corpus),
        "--out",
        s(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.cfg", "train.jsonl", "test.jsonl", "training.jsonl", "model/taxonomy.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let o = bertcnn(&["eval", "--model", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(m["acc_empirical"].as_f64().unwrap() <= m["acc_l1"].as_f64().unwrap());
    let csv = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let o = bertcnn(&["predict", "--model", s(&run), "--text", ""]);
    assert!(o.status.success());
    let p: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let ipc = p["ipc"].as_str().unwrap();
    assert!(ipc.starts_with('A') || ipc.starts_with('B'), "{ipc}");
}
