//! The two-stage responder shared by every command that talks back.

use std::path::Path;

use emoxl::checkpoint::{load_chatbot, load_classifier};
use emoxl::classifier::{predict_emotion, Classifier};
use emoxl::error::DataError;
use emoxl::eval::Responder;
use emoxl::model::{Chatbot, GenerateOptions, MemoryState};
use emoxl::text::vocab::truncate_left;
use emoxl::text::{detokenize, normalize_text, tokenize, CoarseEmotion, TokenId, UtterancePair, Vocabulary};
use emoxl::Float;

use crate::failure::{CmdResult, Failure, EXIT_CHECKPOINT};

/// A loaded classifier and chatbot, each with its own vocabulary.
pub struct Agent {
    pub classifier: Classifier,
    pub classifier_vocab: Vocabulary,
    pub chatbot: Chatbot,
    pub chatbot_vocab: Vocabulary,
}

#[derive(Clone, Debug)]
pub struct Reply {
    /// The emotion the response was conditioned on.
    pub emotion: CoarseEmotion,
    /// The classifier's distribution, even when the emotion was overridden.
    pub probs: Vec<Float>,
    pub response: String,
    pub token_count: usize,
    pub memory: MemoryState,
}

impl Agent {
    pub fn load(classifier: &Path, chatbot: &Path) -> CmdResult<Self> {
        fn tagged(path: &Path) -> impl FnOnce(emoxl::Error) -> Failure + '_ {
            move |e| Failure::new(EXIT_CHECKPOINT, e).context(path.display().to_string())
        }
        let (classifier, classifier_vocab) = load_classifier(classifier).map_err(tagged(classifier))?;
        let (chatbot, chatbot_vocab) = load_chatbot(chatbot).map_err(tagged(chatbot))?;
        Ok(Agent {
            classifier,
            classifier_vocab,
            chatbot,
            chatbot_vocab,
        })
    }

    fn options(&self) -> GenerateOptions {
        GenerateOptions::greedy(self.chatbot.config().max_gen_len)
    }

    /// Classifies `text`, then decodes a response under the predicted emotion
    /// (or `emotion_override`), attending to `memory` when given.
    pub fn reply(
        &self,
        text: &str,
        emotion_override: Option<CoarseEmotion>,
        memory: Option<&MemoryState>,
    ) -> emoxl::Result<Reply> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(DataError::Invalid("utterance is empty after normalization".into()).into());
        }
        let prediction = predict_emotion(text, &self.classifier, &self.classifier_vocab)?;
        let emotion = emotion_override.unwrap_or(prediction.emotion);
        let mut ids = tokenize(&normalized, &self.chatbot_vocab);
        truncate_left(&mut ids, self.chatbot.config().max_len);
        let empty = self.chatbot.empty_memory();
        let (tokens, memory) =
            self.chatbot
                .generate_with_memory(&ids, emotion.id(), memory.unwrap_or(&empty), &self.options())?;
        Ok(Reply {
            emotion,
            probs: prediction.probs,
            response: detokenize(&tokens, &self.chatbot_vocab),
            token_count: tokens.len(),
            memory,
        })
    }
}

/// Evaluation items carry chatbot-vocabulary ids; the classifier sees the
/// same utterance re-tokenized with its own vocabulary.
impl Responder for Agent {
    fn respond(&self, item: &UtterancePair) -> emoxl::Result<(Vec<TokenId>, usize)> {
        let text = detokenize(&item.input_ids, &self.chatbot_vocab);
        let emotion = predict_emotion(&text, &self.classifier, &self.classifier_vocab)?.emotion.id();
        Ok((self.chatbot.generate(&item.input_ids, emotion, &self.options())?, emotion))
    }
}
