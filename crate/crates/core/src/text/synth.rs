//! Deterministic synthetic dialogue corpus.
//!
//! Each coarse emotion owns five signature words and one response template.
//! An input is 3 to 6 filler words with 1 or 2 signature words of its emotion
//! inserted at random positions; the response is the emotion's template.
//! Emotions are assigned round-robin, so any `n` that is a multiple of 8 is
//! exactly balanced.
//!
//! [`SynthOptions`] adds two variants used by the ablation experiment:
//! *ambiguous* inputs carry no signature word (only the emotion label tells
//! the responses apart), and the *control* corpus keys the response on a topic
//! word in the input instead of on the emotion.

use crate::error::DataError;
use crate::rng::Rng;
use crate::text::pairs::DialoguePair;
use crate::text::taxonomy::{CoarseEmotion, EmotionTaxonomy, NUM_EMOTIONS};

pub const SIGNATURE_WORDS: [[&str; 5]; NUM_EMOTIONS] = [
    ["thrilled", "party", "surprise", "wow", "concert"],
    ["terrified", "scared", "dark", "ghost", "nervous"],
    ["gross", "rotten", "shame", "awkward", "vomit"],
    ["angry", "traffic", "rude", "noisy", "furious"],
    ["thankful", "kind", "help", "blessed", "support"],
    ["sad", "lonely", "cried", "miss", "funeral"],
    ["proud", "amazing", "talent", "award", "brilliant"],
    ["ready", "plan", "exam", "practice", "confident"],
];

pub const FILLER_WORDS: [&str; 20] = [
    "i", "was", "the", "today", "at", "work", "my", "friend", "yesterday", "home", "really", "so", "all",
    "night", "this", "week", "got", "a", "new", "job",
];

pub const RESPONSE_TEMPLATES: [&str; NUM_EMOTIONS] = [
    "that sounds so exciting i am happy for you",
    "that sounds scary i hope you are safe now",
    "oh no that sounds really unpleasant to deal with",
    "that would make me angry too honestly",
    "it is wonderful to have people who care",
    "i am so sorry to hear that",
    "wow that is really impressive well done",
    "good luck i am sure you will do great",
];

/// Topic words of the control corpus; topic `k` selects template `k`.
pub const TOPIC_WORDS: [&str; NUM_EMOTIONS] = ["car", "dog", "garden", "kitchen", "phone", "beach", "movie", "school"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Probability that an input has no signature word.
    pub ambiguous_fraction: f64,
    /// When false, responses follow a topic word and ignore the emotion.
    pub emotion_dependent: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            ambiguous_fraction: 0.0,
            emotion_dependent: true,
        }
    }
}

/// The response the generator pairs with `emotion` (emotion-dependent corpus).
pub fn synth_response(emotion: CoarseEmotion) -> &'static str {
    RESPONSE_TEMPLATES[emotion.id()]
}

pub fn synth_corpus(seed: u64, n_pairs: usize) -> Result<Vec<DialoguePair>, DataError> {
    synth_corpus_with(seed, n_pairs, SynthOptions::default())
}

pub fn synth_corpus_with(seed: u64, n_pairs: usize, options: SynthOptions) -> Result<Vec<DialoguePair>, DataError> {
    if n_pairs < NUM_EMOTIONS {
        return Err(DataError::Invalid(format!(
            "synthetic corpus needs at least {NUM_EMOTIONS} pairs, got {n_pairs}"
        )));
    }
    if !(0.0..=1.0).contains(&options.ambiguous_fraction) {
        return Err(DataError::Invalid("ambiguous_fraction must lie in [0, 1]".into()));
    }
    let tax = EmotionTaxonomy;
    let mut rng = Rng::new(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let emotion = CoarseEmotion::ALL[i % NUM_EMOTIONS];
        let group = tax.group(emotion);
        let fine = group[rng.below(group.len())];

        let n_filler = 3 + rng.below(4);
        let mut words: Vec<&str> = (0..n_filler).map(|_| FILLER_WORDS[rng.below(FILLER_WORDS.len())]).collect();
        let ambiguous = rng.uniform() < options.ambiguous_fraction;
        if !ambiguous {
            let sig = &SIGNATURE_WORDS[emotion.id()];
            for _ in 0..1 + rng.below(2) {
                let pos = rng.below(words.len() + 1);
                words.insert(pos, sig[rng.below(sig.len())]);
            }
        }
        let response = if options.emotion_dependent {
            synth_response(emotion)
        } else {
            let topic = rng.below(TOPIC_WORDS.len());
            let pos = rng.below(words.len() + 1);
            words.insert(pos, TOPIC_WORDS[topic]);
            RESPONSE_TEMPLATES[topic]
        };

        pairs.push(DialoguePair {
            conv_id: format!("synth:{seed}:{i}"),
            turn: 1,
            input: words.join(" "),
            response: response.to_string(),
            emotion,
            fine_emotion: fine.to_string(),
            references: vec![response.to_string()],
        });
    }
    Ok(pairs)
}
