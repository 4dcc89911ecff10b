//! BLEU-4 scoring, corpus evaluation and the emotion-fusion ablation.
//!
//! Sentence BLEU uses clipped n-gram precisions for n = 1..4 with a fixed
//! floor on zero precisions and the usual brevity penalty. Items with several
//! ground-truth responses score the arithmetic mean of their per-reference
//! sentence BLEU, and the corpus score is the mean over items.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{EvalError, Result};
use crate::model::{train_chatbot, Chatbot, GenerateOptions, ModelConfig};
use crate::tensor::Float;
use crate::text::{detokenize, normalize_text, TokenId, UtterancePair, Vocabulary};
use crate::train::TrainConfig;

/// Replaces a zero modified precision before the geometric mean.
pub const BLEU_SMOOTHING: Float = 1e-9;
/// Identifies how candidates and references are split into tokens.
pub const TOKENIZER_ID: &str = "normalize-stem-whitespace-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuBreakdown {
    /// Smoothed modified precisions p1..p4.
    pub precisions: [Float; 4],
    pub brevity_penalty: Float,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub score: Float,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU-4 of `candidate` against a single reference.
pub fn bleu4<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Result<BleuBreakdown, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let (c, r) = (candidate.len(), reference.len());
    if c == 0 {
        return Ok(BleuBreakdown {
            precisions: [0.0; 4],
            brevity_penalty: 0.0,
            candidate_len: 0,
            reference_len: r,
            score: 0.0,
        });
    }
    let mut precisions = [0.0; 4];
    for (n, p) in (1..=4).zip(precisions.iter_mut()) {
        let ref_counts = ngram_counts(reference, n);
        let cand_counts = ngram_counts(candidate, n);
        let matched: usize = cand_counts
            .iter()
            .map(|(gram, &k)| k.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = c.saturating_sub(n - 1);
        *p = if matched == 0 {
            BLEU_SMOOTHING
        } else {
            matched as Float / total as Float
        };
    }
    let brevity_penalty = if c > r {
        1.0
    } else {
        (1.0 - r as Float / c as Float).exp()
    };
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<Float>() / 4.0;
    Ok(BleuBreakdown {
        precisions,
        brevity_penalty,
        candidate_len: c,
        reference_len: r,
        score: brevity_penalty * log_mean.exp(),
    })
}

/// Mean of [`bleu4`] over every reference, in the given order.
pub fn multi_ref_bleu<T: Eq + Hash, R: AsRef<[T]>>(candidate: &[T], references: &[R]) -> Result<Float, EvalError> {
    if references.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let mut total = 0.0;
    for r in references {
        total += bleu4(candidate, r.as_ref())?.score;
    }
    Ok(total / references.len() as Float)
}

/// Splits text into scoring tokens.
pub fn scoring_tokens(text: &str) -> Vec<String> {
    normalize_text(text).split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub index: usize,
    pub emotion: String,
    pub candidate: String,
    pub references: usize,
    pub score: Float,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemScore>,
    pub corpus_mean: Float,
    pub count: usize,
    pub smoothing: Float,
    pub tokenizer: String,
}

impl EvalReport {
    /// Builds a report, summing scores in item order.
    pub fn from_items(items: Vec<ItemScore>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyEvalSet);
        }
        let total: Float = items.iter().map(|i| i.score).sum();
        Ok(EvalReport {
            corpus_mean: total / items.len() as Float,
            count: items.len(),
            items,
            smoothing: BLEU_SMOOTHING,
            tokenizer: TOKENIZER_ID.to_string(),
        })
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8}", "emotion", "items", "bleu4");
        for e in crate::text::CoarseEmotion::ALL {
            let scores: Vec<Float> = self.items.iter().filter(|i| i.emotion == e.label()).map(|i| i.score).collect();
            if scores.is_empty() {
                continue;
            }
            let mean = scores.iter().sum::<Float>() / scores.len() as Float;
            let _ = writeln!(out, "{:<12} {:>8} {:>8.4}", e.label(), scores.len(), mean);
        }
        let _ = writeln!(out, "{:<12} {:>8} {:>8.4}", "all", self.count, self.corpus_mean);
        let _ = writeln!(out, "smoothing {:e}, tokenizer {}", self.smoothing, self.tokenizer);
        out
    }
}

/// Produces a response for an encoded evaluation item, plus the emotion label
/// it was conditioned on.
pub trait Responder {
    fn respond(&self, item: &UtterancePair) -> Result<(Vec<TokenId>, usize)>;
}

/// Where the emotion fed to the chatbot comes from.
#[derive(Clone, Copy, Debug)]
pub enum EmotionSource<'a> {
    Classifier(&'a Classifier),
    Gold,
}

/// The two-stage pipeline: classify the input, then greedily decode.
pub struct Pipeline<'a> {
    pub chatbot: &'a Chatbot,
    pub emotion: EmotionSource<'a>,
}

impl Responder for Pipeline<'_> {
    fn respond(&self, item: &UtterancePair) -> Result<(Vec<TokenId>, usize)> {
        let emotion = match self.emotion {
            EmotionSource::Gold => item.coarse_emotion_id,
            EmotionSource::Classifier(c) => {
                let probs = c.classify(&item.input_ids)?;
                crate::tensor::argmax(&probs)
            }
        };
        let opts = GenerateOptions::greedy(self.chatbot.config().max_gen_len);
        Ok((self.chatbot.generate(&item.input_ids, emotion, &opts)?, emotion))
    }
}

/// Generates a response for every item and scores it against the item's
/// references.
pub fn corpus_eval(responder: &impl Responder, items: &[UtterancePair], vocab: &Vocabulary) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(EvalError::EmptyEvalSet.into());
    }
    let mut scored = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let (ids, emotion) = responder.respond(item)?;
        let candidate = detokenize(&ids, vocab);
        let cand_tokens = scoring_tokens(&candidate);
        let refs: Vec<Vec<String>> = item.references.iter().map(|r| scoring_tokens(r)).collect();
        let score = multi_ref_bleu(&cand_tokens, &refs)?;
        scored.push(ItemScore {
            index,
            emotion: crate::text::CoarseEmotion::ALL
                .get(emotion)
                .map(|e| e.label().to_string())
                .unwrap_or_default(),
            candidate,
            references: refs.len(),
            score,
        });
    }
    Ok(EvalReport::from_items(scored)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub fusion: EvalReport,
    pub ablated: EvalReport,
    /// `fusion.corpus_mean - ablated.corpus_mean`.
    pub difference: Float,
}

/// Trains two chatbots that differ only in whether the emotion embedding is
/// fused into the input, and scores both with the gold emotion.
pub fn ablation_compare(
    train: &[UtterancePair],
    eval: &[UtterancePair],
    vocab: &Vocabulary,
    config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<AblationReport> {
    let run = |fusion: bool| -> Result<EvalReport> {
        let config = ModelConfig {
            emotion_fusion: fusion,
            ..config
        };
        let (model, _, _) = train_chatbot(train, config, train_config)?;
        let pipeline = Pipeline {
            chatbot: &model,
            emotion: EmotionSource::Gold,
        };
        corpus_eval(&pipeline, eval, vocab)
    };
    let fusion = run(true)?;
    let ablated = run(false)?;
    Ok(AblationReport {
        difference: fusion.corpus_mean - ablated.corpus_mean,
        fusion,
        ablated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn clipped_unigrams() {
        let b = bleu4(&words("the the the the the the the"), &words("the cat is on the mat")).unwrap();
        assert!((b.precisions[0] - 2.0 / 7.0).abs() < 1e-15);
        assert_eq!(b.precisions[1], BLEU_SMOOTHING);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn brevity_penalty_example() {
        let b = bleu4(&[1, 2], &[1, 2, 3, 4]).unwrap();
        assert!((b.brevity_penalty - (-1.0 as Float).exp()).abs() < 1e-12);
        assert!((b.brevity_penalty - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn identity_and_edges() {
        let x = [5, 6, 7, 8, 9];
        assert_eq!(bleu4(&x, &x).unwrap().score, 1.0);
        let empty: [u8; 0] = [];
        let b = bleu4(&empty, &[1u8]).unwrap();
        assert_eq!((b.score, b.brevity_penalty), (0.0, 0.0));
        assert_eq!(bleu4(&[1u8], &empty), Err(EvalError::EmptyReference));
        let none: [Vec<u8>; 0] = [];
        assert_eq!(multi_ref_bleu(&[1u8], &none), Err(EvalError::NoReferences));
    }

    #[test]
    fn multi_reference_mean() {
        let cand = words("i am so happy for you");
        let r2 = words("that is great news");
        let s2 = bleu4(&cand, &r2).unwrap().score;
        let m = multi_ref_bleu(&cand, &[cand.clone(), r2.clone()]).unwrap();
        assert!((m - (1.0 + s2) / 2.0).abs() < 1e-15);
        let swapped = multi_ref_bleu(&cand, &[r2, cand.clone()]).unwrap();
        assert!((m - swapped).abs() < 1e-15);
        assert_eq!(multi_ref_bleu(&cand, std::slice::from_ref(&cand)).unwrap(), bleu4(&cand, &cand).unwrap().score);
    }

    #[test]
    fn empty_report_is_error() {
        assert_eq!(EvalReport::from_items(vec![]), Err(EvalError::EmptyEvalSet));
    }
}
