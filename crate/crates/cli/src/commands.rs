use std::fs::File;
use std::io::{BufRead, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use emoxl::checkpoint::{save_chatbot, save_classifier};
use emoxl::classifier::train_classifier_with;
use emoxl::eval::corpus_eval;
use emoxl::model::train_chatbot_with;
use emoxl::text::CoarseEmotion;
use emoxl::train::EpochMetrics;
use serde_json::json;

use crate::agent::Agent;
use crate::cli::{Command, EvalArgs, GenerateArgs, ModelArgs, PreprocessArgs, TrainArgs};
use crate::config::{RunConfig, DEFAULT_MAX_VOCAB, DEFAULT_MIN_FREQ};
use crate::data::{eval_corpus, training_corpus, write_corpus, Corpus, DataSource};
use crate::failure::{CmdResult, Failure};

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Preprocess(args) => preprocess(&args),
        Command::TrainClassifier(args) => train_classifier(&args),
        Command::TrainChatbot(args) => train_chatbot(&args),
        Command::Eval(args) => eval(&args),
        Command::Generate(args) => generate(&args),
        Command::Chat(args) => chat(&args),
        Command::Serve(args) => crate::server::run(&args),
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("cannot write {}: {e}", path.display()))
}

pub fn preprocess(args: &PreprocessArgs) -> CmdResult {
    let source: DataSource = args.data.parse()?;
    let corpus = training_corpus(
        &source,
        args.min_freq.unwrap_or(DEFAULT_MIN_FREQ),
        args.max_vocab.unwrap_or(DEFAULT_MAX_VOCAB),
        args.max_len.unwrap_or(RunConfig::default().max_len),
    )?;
    write_corpus(&args.out, &corpus)?;
    eprintln!(
        "wrote {} pairs, vocabulary of {} to {}",
        corpus.pairs.len(),
        corpus.vocab.len(),
        args.out.display()
    );
    Ok(())
}

/// One JSON object per epoch, flushed as it is written.
struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
    last: Instant,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    fn create(path: &Path) -> CmdResult<Self> {
        let file = File::create(path).map_err(|e| output_error(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            last: Instant::now(),
            error: None,
        })
    }

    fn record(&mut self, m: &EpochMetrics) {
        let wall_ms = self.last.elapsed().as_millis() as u64;
        self.last = Instant::now();
        let mut line = json!({ "epoch": m.epoch, "loss": m.loss, "wall_ms": wall_ms });
        if let Some(acc) = m.accuracy {
            line["accuracy"] = json!(acc);
        }
        eprintln!("{line}");
        let written = writeln!(self.out, "{line}").and_then(|_| self.out.flush());
        if let Err(e) = written {
            self.error.get_or_insert(e);
        }
    }

    fn finish(self) -> CmdResult {
        match self.error {
            Some(e) => Err(output_error(&self.path, e)),
            None => Ok(()),
        }
    }
}

fn prepare(args: &TrainArgs, default_out: &str) -> CmdResult<(RunConfig, Corpus, PathBuf, MetricsLog)> {
    let cfg = RunConfig::resolve(args)?;
    let source: DataSource = cfg.data()?.parse()?;
    let corpus = training_corpus(&source, cfg.min_freq, cfg.max_vocab, cfg.max_len)?;
    let out = cfg.out_or(default_out);
    let log = MetricsLog::create(&cfg.metrics_for(&out))?;
    eprintln!("{} training pairs, vocabulary of {}", corpus.pairs.len(), corpus.vocab.len());
    Ok((cfg, corpus, out, log))
}

pub fn train_classifier(args: &TrainArgs) -> CmdResult {
    let (cfg, corpus, out, mut log) = prepare(args, "classifier.ckpt")?;
    let config = cfg.classifier_config(corpus.vocab.len());
    let (mut model, _, _) = train_classifier_with(&corpus.pairs, config, &cfg.train_config(), |m| log.record(m))?;
    log.finish()?;
    model.params_mut().round_to_f32();
    save_classifier(&out, &model, &corpus.vocab)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

pub fn train_chatbot(args: &TrainArgs) -> CmdResult {
    let (cfg, corpus, out, mut log) = prepare(args, "chatbot.ckpt")?;
    let config = cfg.model_config(corpus.vocab.len());
    let (mut model, _, _) = train_chatbot_with(&corpus.pairs, config, &cfg.train_config(), |m| log.record(m))?;
    log.finish()?;
    model.params_mut().round_to_f32();
    save_chatbot(&out, &model, &corpus.vocab)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let source: DataSource = args.data.parse()?;
    let agent = Agent::load(&args.models.classifier, &args.models.chatbot)?;
    let items = eval_corpus(&source, &agent.chatbot_vocab, agent.chatbot.config().max_len)?;
    let report = corpus_eval(&agent, &items, &agent.chatbot_vocab)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| output_error(&args.report, e))?;
    std::fs::write(&args.report, json).map_err(|e| output_error(&args.report, e))?;
    print!("{}", report.summary_table());
    Ok(())
}

fn parse_emotion(label: &str) -> CmdResult<CoarseEmotion> {
    label.parse().map_err(|_| {
        Failure::usage(format!(
            "unknown emotion {label:?}; expected one of {}",
            CoarseEmotion::labels().join(", ")
        ))
    })
}

pub fn generate(args: &GenerateArgs) -> CmdResult {
    let emotion = args.emotion.as_deref().map(parse_emotion).transpose()?;
    let agent = Agent::load(&args.models.classifier, &args.models.chatbot)?;
    let reply = agent.reply(&args.text, emotion, None)?;
    println!("[{}] {}", reply.emotion, reply.response);
    Ok(())
}

/// Answers each input line with `[emotion] response` until end of input.
/// Lines that normalize to nothing are reported on stderr and skipped.
pub fn chat_loop(agent: &Agent, input: impl BufRead, mut output: impl Write, prompt: bool) -> CmdResult {
    let io = |e: std::io::Error| Failure::usage(format!("terminal I/O failed: {e}"));
    if prompt {
        eprint!("> ");
    }
    for line in input.lines() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            match agent.reply(&line, None, None) {
                Ok(reply) => writeln!(output, "[{}] {}", reply.emotion, reply.response).map_err(io)?,
                Err(e) => eprintln!("error: {e}"),
            }
            output.flush().map_err(io)?;
        }
        if prompt {
            eprint!("> ");
        }
    }
    Ok(())
}

pub fn chat(args: &ModelArgs) -> CmdResult {
    let agent = Agent::load(&args.classifier, &args.chatbot)?;
    let stdin = std::io::stdin();
    let prompt = stdin.is_terminal();
    chat_loop(&agent, stdin.lock(), std::io::stdout().lock(), prompt)
}
