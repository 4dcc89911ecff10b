#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub const TINY: &str = r#"{
  "d_emb": 32, "hidden": 32, "dense": 16,
  "d_model": 32, "n_heads": 2, "n_enc_layers": 1, "n_dec_layers": 1,
  "d_ff": 64, "mem_len": 8, "max_gen_len": 16, "dropout": 0.0
}"#;

pub fn emoxl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoxl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub struct Models {
    _dir: tempfile::TempDir,
    pub dir: PathBuf,
    pub classifier: PathBuf,
    pub chatbot: PathBuf,
}

/// A classifier and chatbot trained on the synthetic corpus through the
/// binary, shared by every test in one test executable.
pub fn models() -> &'static Models {
    static MODELS: OnceLock<Models> = OnceLock::new();
    MODELS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        std::fs::write(dir.join("tiny.json"), TINY).unwrap();
        let common = ["--data", "synth:400:1", "--config", "tiny.json", "--seed", "1"];
        let cls = emoxl(
            &[&["train-classifier"], &common[..], &["--epochs", "30", "--batch", "16", "--out", "cls.ckpt"]].concat(),
            &dir,
        );
        assert!(cls.status.success(), "{}", stderr(&cls));
        let chat = emoxl(
            &[&["train-chatbot"], &common[..], &["--epochs", "4", "--batch", "8", "--out", "chat.ckpt"]].concat(),
            &dir,
        );
        assert!(chat.status.success(), "{}", stderr(&chat));
        Models {
            classifier: dir.join("cls.ckpt"),
            chatbot: dir.join("chat.ckpt"),
            dir,
            _dir: tmp,
        }
    })
}
