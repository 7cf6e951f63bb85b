use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use chatir_core::bundle::{train_all, BootstrapConfig, SyntheticData, SEMANTIC_FILE};
use chatir_core::corpus::{write_jsonl, write_pairs, PairRecord};
use chatir_core::emotion::Lexicons;
use chatir_core::ranker::{RankerConfig, RankerModel};
use chatir_core::safety::builtin_offensive_terms;
use chatir_core::semantic::{CdssmEncoder, SemanticConfig};
use chatir_core::synth;
use serde_json::Value;

fn chatir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chatir")).args(args).output().unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    let out = chatir(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(chatir(&["train"]).status.code(), Some(1));
    assert_eq!(chatir(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(chatir(&["index", "build", "--corpus", "x"]).status.code(), Some(1));
    assert_eq!(chatir(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = chatir(&["index", "build", "--corpus", p(&dir.path().join("missing.jsonl")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":0,\"message\":\"hi\",\"context\":[\"a\",\"b\",\"c\"],\"response\":\"yo\"}\n").unwrap();
    let out = chatir(&["index", "build", "--corpus", p(&bad), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let small = dir.path().join("small.jsonl");
    write_pairs(&small, &synth::dialogue_corpus(10, 1)).unwrap();
    let out = chatir(&["train", "semantic", "--corpus", p(&small), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

/// Three indexed pairs; each is queried with its own message and ranked
/// against the other two responses by TF-IDF alone.
#[test]
fn three_document_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("three.jsonl");
    let records = vec![
        PairRecord::new(0, "good morning", &[], "good morning to you"),
        PairRecord::new(1, "good night", &[], "sleep well"),
        PairRecord::new(2, "night owl", &[], "an owl at night"),
    ];
    write_pairs(&corpus, &records).unwrap();
    let models = dir.path().join("models");
    let built = ok_json(&chatir(&["index", "build", "--corpus", p(&corpus), "--out", p(&models)]));
    assert_eq!(built["pairs"], 3);
    assert_eq!(built["vocabulary"], 4);

    CdssmEncoder::new(1).save(models.join(SEMANTIC_FILE)).unwrap();
    RankerModel {
        weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
    .save(models.join("ranker.ckpt"))
    .unwrap();
    let m = ok_json(&chatir(&["eval", "retrieval", "--corpus", p(&corpus), "--models", p(&models)]));

    // idf = ln(4 / (df + 1)) + 1 with df: good 2, morning 1, night 2, owl 1
    let common = (4.0f64 / 3.0).ln() + 1.0;
    let rare = 2.0f64.ln() + 1.0;
    let qn = (2.0 * common * common).sqrt();
    // "good morning": its own pair matches both query terms, the others at most one
    let r0 = 1;
    // "good night": "sleep well" shares nothing, while each distractor shares one
    // common term with cosine c²/(qn·sqrt(c² + r²)) > 0
    let one_term = common * common / (qn * (common * common + rare * rare).sqrt());
    assert!(one_term > 0.0);
    let r1 = 3;
    // "night owl": own response has the same terms → 1, strictly above the others
    let r2 = 1;
    let ranks = [r0, r1, r2];
    let recall1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / 3.0;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / 3.0;
    assert_eq!(m["queries"], 3);
    assert!((m["recall_at_1"].as_f64().unwrap() - recall1).abs() < 1e-12);
    assert!((m["mrr"].as_f64().unwrap() - mrr).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_reproduces_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("pairs.jsonl");
    write_pairs(&corpus, &synth::dialogue_corpus(60, 3)).unwrap();
    let out = dir.path().join("m");
    let args = ["train", "semantic", "--corpus", p(&corpus), "--out", p(&out), "--lr", "0", "--epochs", "1", "--seed", "9"];
    ok_json(&chatir(&args));
    let written = std::fs::read(out.join(SEMANTIC_FILE)).unwrap();
    assert_eq!(written, CdssmEncoder::new(9).checkpoint().to_bytes().unwrap());
    let report = std::fs::read_to_string(out.join("semantic_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 1);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("pairs.jsonl");
    write_pairs(&corpus, &synth::dialogue_corpus(60, 4)).unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok_json(&chatir(&["train", "semantic", "--corpus", p(&corpus), "--out", p(&out), "--epochs", "1"]));
        bytes.push(std::fs::read(out.join(SEMANTIC_FILE)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_ne!(bytes[0], CdssmEncoder::new(17).checkpoint().to_bytes().unwrap());
}

#[test]
fn classifier_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let lex = Lexicons::builtin();
    let models = dir.path().join("models");
    std::fs::create_dir_all(&models).unwrap();
    CdssmEncoder::new(2).save(models.join(SEMANTIC_FILE)).unwrap();

    let emo = dir.path().join("emotion.jsonl");
    write_jsonl(&emo, &synth::emotion_examples(120, 5, &lex)).unwrap();
    let last = ok_json(&chatir(&["train", "emotion", "--corpus", p(&emo), "--out", p(&models), "--epochs", "3"]));
    assert_eq!(last["epoch"], 2);
    assert!(models.join("emotion_report.jsonl").exists());
    let m = ok_json(&chatir(&["eval", "emotion", "--corpus", p(&emo), "--models", p(&models)]));
    assert_eq!(m["examples"], 120);
    assert!((0.0..=1.0).contains(&m["macro_f1"].as_f64().unwrap()));

    let safety = dir.path().join("safety.jsonl");
    write_jsonl(&safety, &synth::safety_examples(200, 6, &builtin_offensive_terms(), &lex)).unwrap();
    ok_json(&chatir(&["train", "safety", "--corpus", p(&safety), "--out", p(&models), "--epochs", "2"]));
    assert!(models.join("safety_report.jsonl").exists());
    let m = ok_json(&chatir(&["eval", "safety", "--corpus", p(&safety), "--models", p(&models)]));
    for key in ["precision", "recall", "false_positive_rate"] {
        assert!(m[key].is_number(), "{key}");
    }
    assert_eq!(m["examples"], 200);
}

#[test]
fn synth_writes_every_dataset() {
    let dir = tempfile::tempdir().unwrap();
    ok_json(&chatir(&["synth", "--out", p(dir.path()), "--seed", "2"]));
    for f in ["corpus", "ranker_pairs", "heldout_pairs", "emotion_train", "emotion_heldout", "safety_train", "safety_heldout"] {
        assert!(dir.path().join(format!("data/{f}.jsonl")).exists(), "{f}");
    }
}

#[test]
fn ranker_training_and_terminal_chat() {
    let dir = tempfile::tempdir().unwrap();
    let lex = Lexicons::builtin();
    let cfg = BootstrapConfig {
        seed: 6,
        train_pairs: 120,
        ranker_pairs: 100,
        heldout_pairs: 10,
        emotion_train: 120,
        emotion_heldout: 20,
        safety_train: 400,
        semantic: SemanticConfig {
            epochs: 2,
            ..SemanticConfig::default()
        },
        ranker: RankerConfig {
            epochs: 50,
            ..RankerConfig::default()
        },
        ..BootstrapConfig::default()
    };
    let data = SyntheticData::generate(&cfg, &lex, &builtin_offensive_terms());
    data.write(dir.path()).unwrap();
    let models = dir.path().join("models");
    train_all(&models, &data, &cfg, &lex).unwrap();

    let ranker_pairs = dir.path().join("data/ranker_pairs.jsonl");
    let out = ok_json(&chatir(&["train", "ranker", "--corpus", p(&ranker_pairs), "--out", p(&models), "--epochs", "200"]));
    assert!(out["train_pairwise_accuracy"].as_f64().unwrap() > 0.5);
    assert_eq!(std::fs::read_to_string(models.join("ranker_report.jsonl")).unwrap().lines().count(), 200);

    let config = dir.path().join("service.json");
    std::fs::write(&config, r#"{"models_dir": "models"}"#).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_chatir"))
        .args(["chat", "--config", p(&config)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"hello there\n/attach\nsh1t happens\n/quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let replies: Vec<&str> = text.lines().filter(|l| l.contains("  [")).collect();
    assert_eq!(replies.len(), 3, "{text}");
    assert!(replies[1].starts_with("> i can't see pictures yet, tell me about it!  [fallback"));
    assert!(replies[2].contains("[dodge | -]"));
}
