mod common;

use std::io::Write;
use std::process::{Command, Stdio};

use common::{emoxl, models, stderr, stdout, TINY};
use serde_json::Value;

fn tempdir_with_config() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn train_chatbot_one_epoch() {
    let dir = tempdir_with_config();
    let out = emoxl(
        &["train-chatbot", "--data", "synth:32", "--config", "tiny.json", "--epochs", "1", "--batch", "8", "--out", "bot.ckpt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("bot.ckpt").is_file());
    let metrics = std::fs::read_to_string(dir.path().join("bot.metrics.jsonl")).unwrap();
    let lines: Vec<Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["epoch"], 1);
    assert!(lines[0]["loss"].as_f64().unwrap().is_finite());
    assert!(lines[0]["wall_ms"].is_u64());
    assert!(lines[0].get("accuracy").is_none());
}

#[test]
fn classifier_metrics_carry_accuracy() {
    let metrics = std::fs::read_to_string(models().dir.join("cls.metrics.jsonl")).unwrap();
    let last: Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    assert_eq!(last["epoch"], 30);
    assert!(last["accuracy"].as_f64().unwrap() >= 0.95, "{last}");
}

#[test]
fn same_seed_same_checkpoint() {
    let dir = tempdir_with_config();
    for name in ["a.ckpt", "b.ckpt"] {
        let out = emoxl(
            &["train-chatbot", "--data", "synth:24:5", "--config", "tiny.json", "--epochs", "2", "--batch", "8", "--seed", "3", "--out", name],
            dir.path(),
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("b.ckpt")).unwrap();
    assert_eq!(a, b);
    let losses = |name: &str| -> Vec<u64> {
        std::fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["loss"].as_f64().unwrap().to_bits())
            .collect()
    };
    assert_eq!(losses("a.metrics.jsonl"), losses("b.metrics.jsonl"));
}

#[test]
fn eval_with_missing_checkpoint_exits_3() {
    let m = models();
    let out = emoxl(
        &["eval", "--data", "synth:10", "--classifier", "missing.ckpt", "--chatbot", m.chatbot.to_str().unwrap()],
        &m.dir,
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn swapped_checkpoints_exit_3_naming_both_tags() {
    let m = models();
    let out = emoxl(
        &["generate", "--text", "hello there", "--classifier", m.chatbot.to_str().unwrap(), "--chatbot", m.chatbot.to_str().unwrap()],
        &m.dir,
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("classifier") && err.contains("chatbot"), "{err}");
}

#[test]
fn eval_writes_a_report() {
    let m = models();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = emoxl(
        &[
            "eval", "--data", "synth:40:9",
            "--classifier", m.classifier.to_str().unwrap(),
            "--chatbot", m.chatbot.to_str().unwrap(),
            "--report", report.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["count"], 40);
    assert_eq!(json["smoothing"].as_f64().unwrap(), 1e-9);
    let mean = json["corpus_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
    assert!(stdout(&out).contains("all"));
}

#[test]
fn chat_tags_a_frightened_utterance_afraid() {
    let m = models();
    let mut child = Command::new(env!("CARGO_BIN_EXE_emoxl"))
        .args(["chat", "--classifier", m.classifier.to_str().unwrap(), "--chatbot", m.chatbot.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"i was terrified all night\n\n!!!\ni got a new job\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines[0].starts_with("[afraid] "), "{text}");
    assert!(stderr(&out).contains("empty"));
}

#[test]
fn generate_honours_the_emotion_override() {
    let m = models();
    let args = |extra: &[&str]| {
        let mut v = vec!["generate", "--text", "i was terrified all night", "--classifier", m.classifier.to_str().unwrap()];
        v.extend(["--chatbot", m.chatbot.to_str().unwrap()]);
        v.extend_from_slice(extra);
        emoxl(&v, &m.dir)
    };
    let plain = args(&[]);
    assert!(stdout(&plain).starts_with("[afraid] "), "{}", stdout(&plain));
    let forced = args(&["--emotion", "grateful"]);
    assert!(stdout(&forced).starts_with("[grateful] "), "{}", stdout(&forced));
    assert_eq!(args(&["--emotion", "sad"]).status.code(), Some(1));
}

#[test]
fn usage_and_data_errors() {
    let dir = tempdir_with_config();
    let no_data = emoxl(&["train-classifier", "--epochs", "1"], dir.path());
    assert_eq!(no_data.status.code(), Some(1));
    assert_eq!(emoxl(&["train-chatbot", "--epochs", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(emoxl(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(emoxl(&["--help"], dir.path()).status.code(), Some(0));

    std::fs::write(dir.path().join("bad.csv"), "conv_id,utterance_idx\nx,1\n").unwrap();
    let bad = emoxl(&["train-classifier", "--data", "bad.csv", "--epochs", "1"], dir.path());
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));
    let missing = emoxl(&["train-classifier", "--data", "none.csv", "--epochs", "1"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn preprocessed_cache_trains() {
    let dir = tempdir_with_config();
    let pre = emoxl(&["preprocess", "--data", "synth:48:2", "--out", "cache"], dir.path());
    assert!(pre.status.success(), "{}", stderr(&pre));
    let first = std::fs::read_to_string(dir.path().join("cache/pairs.jsonl")).unwrap();
    let row: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["input_ids", "response_ids", "emotion_id", "references"] {
        assert!(row.get(key).is_some(), "{key}");
    }
    let out = emoxl(
        &["train-chatbot", "--data", "cache", "--config", "tiny.json", "--epochs", "1", "--batch", "16", "--out", "c.ckpt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn serve_exits_1_when_the_port_is_taken() {
    let m = models();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = emoxl(
        &["serve", "--port", &port, "--classifier", m.classifier.to_str().unwrap(), "--chatbot", m.chatbot.to_str().unwrap()],
        &m.dir,
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
