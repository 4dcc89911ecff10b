//! Dataset ingestion, normalization, vocabulary and the emotion taxonomy.

pub mod ed;
pub mod normalize;
pub mod pairs;
pub mod synth;
pub mod taxonomy;
pub mod vocab;

pub use ed::{parse_ed_csv, serialize_ed_csv, DialogueRecord};
pub use normalize::{normalize_text, Normalizer, SuffixStemmer};
pub use pairs::{encode_pair, encode_pairs, eval_items, make_pairs, pair_vocab, read_cache, write_cache, DialoguePair, UtterancePair};
pub use synth::{synth_corpus, synth_corpus_with, SynthOptions};
pub use taxonomy::{coarse_emotion, CoarseEmotion, EmotionTaxonomy, NUM_EMOTIONS};
pub use vocab::{build_vocab, detokenize, tokenize, TokenId, Vocabulary, BOS, EOS, PAD, UNK};
