use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "emoxl", version, about = "Emotion-aware Transformer-XL dialogue system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair, normalize and encode a corpus into a cache directory.
    Preprocess(PreprocessArgs),
    /// Train the LSTM emotion classifier.
    TrainClassifier(TrainArgs),
    /// Train the Transformer-XL response generator.
    TrainChatbot(TrainArgs),
    /// Score the two-stage pipeline with sentence BLEU-4.
    Eval(EvalArgs),
    /// Answer a single utterance.
    Generate(GenerateArgs),
    /// Read utterances from stdin and answer each line.
    Chat(ModelArgs),
    /// Serve the JSON HTTP interface.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// `synth[:N[:SEED]]` or an ED-format CSV file.
    #[arg(long)]
    pub data: String,
    /// Output directory for `pairs.jsonl` and `vocab.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// `synth[:N[:SEED]]`, an ED-format CSV file, or a preprocessed directory.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat JSON file whose keys mirror the flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the metrics history goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub chatbot: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: String,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "eval_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Coarse emotion label to use instead of the classifier's prediction.
    #[arg(long)]
    pub emotion: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Carry Transformer-XL memory across requests that share a session_id.
    #[arg(long)]
    pub session: bool,
}
