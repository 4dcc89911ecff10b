//! Corpus sources named by `--data`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use emoxl::text::{
    encode_pairs, eval_items, make_pairs, pair_vocab, parse_ed_csv, read_cache, synth_corpus, write_cache, DialoguePair,
    UtterancePair, Vocabulary,
};

use crate::failure::{CmdResult, Failure};

pub const SYNTH_DEFAULT_PAIRS: usize = 512;
pub const CACHE_PAIRS: &str = "pairs.jsonl";
pub const CACHE_VOCAB: &str = "vocab.json";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `synth[:N[:SEED]]`
    Synth { pairs: usize, seed: u64 },
    /// An ED-format CSV file.
    Csv(PathBuf),
    /// A directory written by `preprocess`.
    Cache(PathBuf),
}

impl FromStr for DataSource {
    type Err = Failure;

    fn from_str(s: &str) -> CmdResult<Self> {
        let mut parts = s.split(':');
        if parts.next() == Some("synth") {
            let bad = || Failure::usage(format!("bad synthetic source {s:?}, expected synth[:N[:SEED]]"));
            let pairs = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
            let seed = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
            if parts.next().is_some() || pairs == Some(0) {
                return Err(bad());
            }
            return Ok(DataSource::Synth {
                pairs: pairs.unwrap_or(SYNTH_DEFAULT_PAIRS),
                seed: seed.unwrap_or(0),
            });
        }
        let path = PathBuf::from(s);
        if path.is_dir() {
            Ok(DataSource::Cache(path))
        } else {
            Ok(DataSource::Csv(path))
        }
    }
}

/// Encoded pairs with the vocabulary their ids refer to.
pub struct Corpus {
    pub pairs: Vec<UtterancePair>,
    pub vocab: Vocabulary,
}

fn text_pairs(source: &DataSource) -> CmdResult<Vec<DialoguePair>> {
    match source {
        DataSource::Synth { pairs, seed } => Ok(synth_corpus(*seed, *pairs)?),
        DataSource::Csv(path) => {
            let bytes =
                std::fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            let records = parse_ed_csv(&bytes).map_err(|e| Failure::from(e).context(path.display().to_string()))?;
            Ok(make_pairs(&records)?)
        }
        DataSource::Cache(dir) => Err(Failure::usage(format!(
            "{} is a preprocessed cache; text-level pairs are not available",
            dir.display()
        ))),
    }
}

fn read_vocab(dir: &Path) -> CmdResult<Vocabulary> {
    let path = dir.join(CACHE_VOCAB);
    let file = File::open(&path).map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_pairs(dir: &Path) -> CmdResult<Vec<UtterancePair>> {
    let path = dir.join(CACHE_PAIRS);
    let file = File::open(&path).map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))?;
    read_cache(BufReader::new(file)).map_err(|e| Failure::from(e).context(path.display().to_string()))
}

/// Loads a training corpus, building the vocabulary from it unless the source
/// is a cache that already carries one.
pub fn training_corpus(source: &DataSource, min_freq: usize, max_vocab: usize, max_len: usize) -> CmdResult<Corpus> {
    if let DataSource::Cache(dir) = source {
        return Ok(Corpus {
            vocab: read_vocab(dir)?,
            pairs: read_pairs(dir)?,
        });
    }
    let pairs = text_pairs(source)?;
    let vocab = pair_vocab(&pairs, min_freq, max_vocab)?;
    Ok(Corpus {
        pairs: encode_pairs(&pairs, &vocab, max_len),
        vocab,
    })
}

/// Loads evaluation items (one per distinct input) encoded with `vocab`.
pub fn eval_corpus(source: &DataSource, vocab: &Vocabulary, max_len: usize) -> CmdResult<Vec<UtterancePair>> {
    if let DataSource::Cache(dir) = source {
        if read_vocab(dir)? != *vocab {
            return Err(Failure::data(format!(
                "{} was encoded with a different vocabulary than the chatbot checkpoint",
                dir.display()
            )));
        }
        return read_pairs(dir);
    }
    Ok(encode_pairs(&eval_items(&text_pairs(source)?), vocab, max_len))
}

/// Writes `pairs.jsonl` and `vocab.json` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> CmdResult<()> {
    let io = |e: std::io::Error| Failure::usage(format!("cannot write to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let file = File::create(dir.join(CACHE_PAIRS)).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    write_cache(&corpus.pairs, &mut out)?;
    std::io::Write::flush(&mut out).map_err(io)?;
    let vocab = serde_json::to_string(&corpus.vocab).map_err(|e| Failure::usage(e.to_string()))?;
    std::fs::write(dir.join(CACHE_VOCAB), vocab).map_err(io)?;
    Ok(())
}
