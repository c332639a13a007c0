use std::fs;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write;

use codesum::corpus::{Corpus, Vocabulary};
use codesum::decoding::{greedy_decode, DEFAULT_MAX_DECODE_LEN};
use codesum::metrics::corpus_bleu;
use codesum::training::{eval_batches, evaluate_loss, load_checkpoint};
use serde_json::Value;

fn codesum(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codesum")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = codesum(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_cleanly(dir: &Path, args: &[&str]) -> String {
    let out = codesum(dir, args);
    assert!(!out.status.success(), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: ") && !stderr.contains("panicked"), "{stderr}");
    stderr
}

fn write_jsonl(path: &Path, pairs: &[(&str, &str)]) {
    let body: String = pairs
        .iter()
        .map(|(m, c)| serde_json::json!({ "method": m, "comment": c }).to_string() + "\n")
        .collect();
    fs::write(path, body).unwrap();
}

#[test]
fn preprocess_reproduces_the_worked_examples() {
    let dir = tempfile::tempdir().unwrap();
    let long_method = format!("void f() {{ {} }}", vec!["x"; 99].join(" "));
    write_jsonl(
        &dir.path().join("raw.jsonl"),
        &[
            ("public PartVO getChild(){\n        return child;\n    }", "get the child part"),
            (
                "public double getOxygenConsumptionRate() {\n        return getValueAsDouble(OXYGEN_CONSUMPTION_RATE);\n    }",
                "gets the oxygen consumption rate",
            ),
            (&long_method, "does nothing at all"),
            ("___", "an empty method"),
        ],
    );
    let report: Value = serde_json::from_str(&ok(dir.path(), &["preprocess", "raw.jsonl", "--out", "corpus"])).unwrap();
    assert_eq!(report["pairs_in"], 4);
    assert_eq!(report["pairs_kept"], 2);
    assert_eq!(report["dropped_by_length"], 1);
    assert_eq!(report["dropped_empty"], 1);
    assert_eq!(
        fs::read_to_string(dir.path().join("corpus/functions.tok")).unwrap(),
        "public part vo get child return child\n\
         public double get oxygen consumption rate return get value as double oxygen consumption rate\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("corpus/comments.tok")).unwrap(),
        "get the child part\ngets the oxygen consumption rate\n"
    );
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("corpus/report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn empty_input_succeeds_with_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let report: Value = serde_json::from_str(&ok(dir.path(), &["preprocess", "empty.jsonl", "--out", "c"])).unwrap();
    assert_eq!(report["pairs_in"], 0);
    assert_eq!(report["pairs_kept"], 0);
    assert_eq!(fs::read_to_string(dir.path().join("c/functions.tok")).unwrap(), "");
    assert_eq!(fs::read_to_string(dir.path().join("c/comments.tok")).unwrap(), "");
}

#[test]
fn contract_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.jsonl"), "{\"method\": \"int f() { return 1; }\"}\n").unwrap();
    assert!(fails_cleanly(d, &["preprocess", "bad.jsonl", "--out", "c"]).contains("line 1"));
    fails_cleanly(d, &["preprocess", "missing.jsonl", "--out", "c"]);
    fs::create_dir(d.join("ragged")).unwrap();
    fs::write(d.join("ragged/functions.tok"), "a b\nc d\n").unwrap();
    fs::write(d.join("ragged/comments.tok"), "x y z\n").unwrap();
    fails_cleanly(d, &["split", "--corpus", "ragged", "--out", "s", "--train", "1"]);
    fails_cleanly(d, &["vocab", "--corpus", "nowhere", "--out", "v"]);
    fs::write(d.join("junk.ckpt"), b"DSUM\x01\x00").unwrap();
    fails_cleanly(d, &["eval", "--checkpoint", "junk.ckpt", "--test", "ragged"]);
    fails_cleanly(d, &["summarize", "--checkpoint", "junk.ckpt", "ragged/functions.tok"]);
}

/// Synthesizes, preprocesses and splits a small corpus inside `dir`.
fn prepare(dir: &Path) {
    ok(dir, &["synth", "--n", "260", "--seed", "3", "--out", "raw.jsonl"]);
    ok(dir, &["preprocess", "raw.jsonl", "--out", "corpus"]);
    let sizes: Value = serde_json::from_str(&ok(
        dir,
        &["split", "--corpus", "corpus", "--out", "splits", "--train", "200", "--val", "30", "--test", "30", "--seed", "1"],
    ))
    .unwrap();
    assert_eq!(sizes, serde_json::json!({ "train": 200, "val": 30, "test": 30 }));
    let err = fails_cleanly(dir, &["split", "--corpus", "corpus", "--out", "big", "--preset", "small"]);
    assert!(err.contains("corpus holds"));
}

#[test]
fn train_eval_summarize_attention() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let vocab: Value = serde_json::from_str(&ok(d, &["vocab", "--corpus", "splits/train", "--out", "vocab"])).unwrap();
    assert!(vocab["src_vocab"].as_u64().unwrap() > 4);

    let best = ok(
        d,
        &[
            "train", "--train", "splits/train", "--val", "splits/val", "--out", "run", "--layers", "1", "--d-model", "16",
            "--heads", "2", "--d-ff", "32", "--batch", "16", "--epochs", "3", "--lr", "3e-3", "--seed", "5",
        ],
    );
    let best = best.trim();
    assert!(best.starts_with("run/epoch-"));
    assert_eq!(fs::read_to_string(d.join("run/src.vocab")).unwrap(), fs::read_to_string(d.join("vocab/src.vocab")).unwrap());
    assert_eq!(fs::read_to_string(d.join("run/train.jsonl")).unwrap().lines().count(), 3);
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["records"].as_array().unwrap().len(), 3);

    // eval equals the library metrics on the same decodes
    let report: Value = serde_json::from_str(&ok(d, &["eval", "--checkpoint", best, "--test", "splits/test"])).unwrap();
    let model = load_checkpoint(d.join(best)).unwrap();
    let src = Vocabulary::load(d.join("run/src.vocab")).unwrap();
    let tgt = Vocabulary::load(d.join("run/tgt.vocab")).unwrap();
    let test = Corpus::load(d.join("splits/test")).unwrap();
    let pairs = test.encode(&src, &tgt);
    let candidates: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| tgt.decode_ids(&greedy_decode(&model, &p.src, DEFAULT_MAX_DECODE_LEN).unwrap().ids))
        .collect();
    let bleu = corpus_bleu(&candidates, &test.comments).unwrap() * 100.0;
    let ppl = evaluate_loss(&model, &eval_batches(&pairs, 32)).unwrap().perplexity().unwrap();
    assert_eq!(report["bleu"].as_f64().unwrap(), bleu);
    assert_eq!(report["test_ppl"].as_f64().unwrap(), ppl);
    assert_eq!(report["n_examples"], 30);

    // summarize: one line per blank-line-separated method, file or stdin
    let methods = "public String getName() {\n  return name;\n}\n\n\npublic int getCount() { return count; }\n";
    fs::write(d.join("methods.java"), methods).unwrap();
    let from_file = ok(d, &["summarize", "--checkpoint", best, "methods.java"]);
    assert_eq!(from_file.lines().count(), 2);
    let mut child = Command::new(env!("CARGO_BIN_EXE_codesum"))
        .current_dir(d)
        .args(["summarize", "--checkpoint", best])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(methods.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), from_file);

    let line = ok(d, &["attention", "--checkpoint", best, "methods.java", "--out", "att.json", "--max-len", "4"]);
    let record: Value = serde_json::from_str(&fs::read_to_string(d.join("att.json")).unwrap()).unwrap();
    let generated = record["generated_tokens"].as_array().unwrap();
    assert!(generated.len() <= 4);
    assert_eq!(line.split_whitespace().count(), generated.len());
    assert_eq!(record["source_tokens"].as_array().unwrap().len(), 12);
    let layers = record["weights"].as_array().unwrap();
    assert_eq!(layers.len(), 1);
    assert_eq!(layers[0].as_array().unwrap().len(), 2);
    for head in layers[0].as_array().unwrap() {
        for row in head.as_array().unwrap() {
            let sum: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    fs::write(d.join("blank.java"), "\n\n").unwrap();
    fails_cleanly(d, &["summarize", "--checkpoint", best, "blank.java"]);
    fs::write(d.join("symbols.java"), "{ ; }\n").unwrap();
    fails_cleanly(d, &["summarize", "--checkpoint", best, "symbols.java"]);
    fails_cleanly(d, &["eval", "--checkpoint", best, "--test", "splits/test", "--vocab-dir", "corpus"]);
}

#[test]
fn recurrent_model_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    ok(
        d,
        &[
            "train", "--model", "seq2seq", "--train", "splits/train", "--val", "splits/val", "--out", "rnn", "--embed", "8",
            "--hidden", "8", "--epochs", "1", "--batch", "32",
        ],
    );
    let report: Value =
        serde_json::from_str(&ok(d, &["eval", "--checkpoint", "rnn/epoch-001.ckpt", "--test", "splits/test"])).unwrap();
    assert!(report["test_ppl"].as_f64().unwrap() > 1.0);

    let out = ok(
        d,
        &[
            "grid", "--train", "splits/train", "--val", "splits/val", "--lr", "0,0.003", "--layers", "1", "--d-model", "8",
            "--heads", "2", "--batch", "32", "--epochs", "2",
        ],
    );
    let rows: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["rank"], 1);
    assert_eq!(rows[0]["point"]["learning_rate"], 0.003);
    assert!(rows[0]["final_val_ppl"].as_f64().unwrap() < rows[1]["final_val_ppl"].as_f64().unwrap());
}
