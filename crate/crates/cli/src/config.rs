//! Run configuration: built-in defaults, then a flat JSON file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use emoxl::classifier::ClassifierConfig;
use emoxl::model::ModelConfig;
use emoxl::optim::AdamConfig;
use emoxl::train::TrainConfig;
use emoxl::Float;

use crate::cli::TrainArgs;
use crate::failure::{CmdResult, Failure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<String>,
    pub out: Option<PathBuf>,
    /// Defaults to the checkpoint path with a `.metrics.jsonl` extension.
    pub metrics: Option<PathBuf>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub max_len: usize,
    pub d_emb: usize,
    pub hidden: usize,
    pub dense: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub mem_len: usize,
    pub max_gen_len: usize,
    pub emotion_fusion: bool,
}

pub const DEFAULT_MIN_FREQ: usize = 2;
pub const DEFAULT_MAX_VOCAB: usize = 20_000;

impl Default for RunConfig {
    fn default() -> Self {
        let cls = ClassifierConfig::new(0);
        let chat = ModelConfig::new(0);
        let train = TrainConfig::default();
        RunConfig {
            data: None,
            out: None,
            metrics: None,
            epochs: train.epochs,
            batch: train.batch_size,
            lr: train.adam.lr as f64,
            dropout: chat.dropout as f64,
            seed: train.seed,
            min_freq: DEFAULT_MIN_FREQ,
            max_vocab: DEFAULT_MAX_VOCAB,
            max_len: chat.max_len,
            d_emb: cls.d_emb,
            hidden: cls.hidden,
            dense: cls.dense,
            d_model: chat.d_model,
            n_heads: chat.n_heads,
            n_enc_layers: chat.n_enc_layers,
            n_dec_layers: chat.n_dec_layers,
            d_ff: chat.d_ff,
            mem_len: chat.mem_len,
            max_gen_len: chat.max_gen_len,
            emotion_fusion: chat.emotion_fusion,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
    }

    /// Defaults, overridden by `--config`, overridden by the other flags.
    pub fn resolve(args: &TrainArgs) -> CmdResult<Self> {
        let mut cfg = match &args.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &args.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &args.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = args.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = args.batch {
            cfg.batch = v;
        }
        if let Some(v) = args.lr {
            cfg.lr = v;
        }
        if let Some(v) = args.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }

    pub fn data(&self) -> CmdResult<&str> {
        self.data
            .as_deref()
            .ok_or_else(|| Failure::usage("no training data: pass --data or set \"data\" in the config"))
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn metrics_for(&self, out: &Path) -> PathBuf {
        self.metrics.clone().unwrap_or_else(|| out.with_extension("metrics.jsonl"))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr as Float,
                ..AdamConfig::default()
            },
            seed: self.seed,
        }
    }

    pub fn classifier_config(&self, vocab_size: usize) -> ClassifierConfig {
        ClassifierConfig {
            vocab_size,
            d_emb: self.d_emb,
            hidden: self.hidden,
            dense: self.dense,
            dropout: self.dropout as Float,
            max_len: self.max_len,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            mem_len: self.mem_len,
            dropout: self.dropout as Float,
            max_gen_len: self.max_gen_len,
            max_len: self.max_len,
            emotion_fusion: self.emotion_fusion,
        }
    }
}
