//! Utterance/response pairing and the encoded training unit.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::text::ed::DialogueRecord;
use crate::text::normalize::normalize_text;
use crate::text::taxonomy::{CoarseEmotion, EmotionTaxonomy};
use crate::text::vocab::{build_vocab, tokenize, truncate_left, truncate_right, TokenId, Vocabulary};

/// A text-level (utterance, response) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub conv_id: String,
    /// `utterance_idx` of the input turn.
    pub turn: u32,
    pub input: String,
    pub response: String,
    pub emotion: CoarseEmotion,
    pub fine_emotion: String,
    /// Every response to this input in the same conversation.
    pub references: Vec<String>,
}

/// Consecutive-turn pairs: within each conversation (ordered by
/// `utterance_idx`), turn i is the input for turn i+1. Pairs whose input text
/// repeats within a conversation share one merged reference set.
pub fn make_pairs(records: &[DialogueRecord]) -> Result<Vec<DialoguePair>, DataError> {
    let tax = EmotionTaxonomy;
    let mut order: Vec<&str> = Vec::new();
    let mut convs: HashMap<&str, Vec<&DialogueRecord>> = HashMap::new();
    for r in records {
        convs
            .entry(r.conv_id.as_str())
            .or_insert_with(|| {
                order.push(r.conv_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut pairs = Vec::new();
    for conv_id in order {
        let turns = convs.get_mut(conv_id).unwrap();
        turns.sort_by_key(|r| r.utterance_idx);
        let emotion = tax.coarse_of(&turns[0].context_emotion)?;
        let start = pairs.len();
        for w in turns.windows(2) {
            pairs.push(DialoguePair {
                conv_id: conv_id.to_string(),
                turn: w[0].utterance_idx,
                input: w[0].utterance.clone(),
                response: w[1].utterance.clone(),
                emotion,
                fine_emotion: w[0].context_emotion.clone(),
                references: Vec::new(),
            });
        }
        let conv_pairs = &mut pairs[start..];
        let mut refs: HashMap<String, Vec<String>> = HashMap::new();
        for p in conv_pairs.iter() {
            refs.entry(normalize_text(&p.input)).or_default().push(p.response.clone());
        }
        for p in conv_pairs.iter_mut() {
            p.references = refs[&normalize_text(&p.input)].clone();
        }
    }
    Ok(pairs)
}

/// One evaluation item per distinct (conversation, input text).
pub fn eval_items(pairs: &[DialoguePair]) -> Vec<DialoguePair> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert((p.conv_id.clone(), normalize_text(&p.input))))
        .cloned()
        .collect()
}

/// The encoded training/evaluation unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtterancePair {
    pub input_ids: Vec<TokenId>,
    pub response_ids: Vec<TokenId>,
    #[serde(rename = "emotion_id")]
    pub coarse_emotion_id: usize,
    #[serde(skip)]
    pub fine_emotion: String,
    pub references: Vec<String>,
}

impl UtterancePair {
    pub fn emotion(&self) -> Option<CoarseEmotion> {
        CoarseEmotion::from_id(self.coarse_emotion_id)
    }
}

/// Normalizes and tokenizes a pair. Inputs longer than `max_len` keep their
/// most recent tokens; responses keep their beginning.
pub fn encode_pair(pair: &DialoguePair, vocab: &Vocabulary, max_len: usize) -> UtterancePair {
    let mut input_ids = tokenize(&normalize_text(&pair.input), vocab);
    truncate_left(&mut input_ids, max_len);
    let mut response_ids = tokenize(&normalize_text(&pair.response), vocab);
    truncate_right(&mut response_ids, max_len);
    UtterancePair {
        input_ids,
        response_ids,
        coarse_emotion_id: pair.emotion.id(),
        fine_emotion: pair.fine_emotion.clone(),
        references: pair.references.clone(),
    }
}

pub fn encode_pairs(pairs: &[DialoguePair], vocab: &Vocabulary, max_len: usize) -> Vec<UtterancePair> {
    pairs.iter().map(|p| encode_pair(p, vocab, max_len)).collect()
}

/// Vocabulary over the normalized inputs and responses of `pairs`.
pub fn pair_vocab(pairs: &[DialoguePair], min_freq: usize, max_size: usize) -> Result<Vocabulary, DataError> {
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|p| [normalize_text(&p.input), normalize_text(&p.response)])
        .collect();
    build_vocab(texts.iter().map(String::as_str), min_freq, max_size)
}

/// Writes one JSON object per line.
pub fn write_cache<W: Write>(pairs: &[UtterancePair], mut out: W) -> Result<(), DataError> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_cache<R: BufRead>(input: R) -> Result<Vec<UtterancePair>, DataError> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: UtterancePair = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            row: i + 1,
            message: e.to_string(),
        })?;
        if pair.emotion().is_none() {
            return Err(DataError::Malformed {
                row: i + 1,
                message: format!("emotion_id {} outside [0, 8)", pair.coarse_emotion_id),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}
