//! LSTM emotion classifier: embedding, one LSTM layer, a ReLU dense layer and
//! an 8-way softmax over the coarse emotions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{DataError, Error, Result, TensorError};
use crate::optim::AdamState;
use crate::params::{init_uniform, Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{argmax, Float, Tensor};
use crate::text::normalize::normalize_text;
use crate::text::pairs::UtterancePair;
use crate::text::taxonomy::{CoarseEmotion, NUM_EMOTIONS};
use crate::text::vocab::{tokenize, truncate_left, Vocabulary};
use crate::train::{epoch_batches, EpochMetrics, TrainConfig};

const INIT_BOUND: f64 = 0.08;
const FORGET_BIAS: Float = 1.0;
/// Gate order used for parameter names and the fused gate matrix.
pub const GATES: [&str; 4] = ["i", "f", "o", "g"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub hidden: usize,
    pub dense: usize,
    pub dropout: Float,
    pub max_len: usize,
}

impl ClassifierConfig {
    pub fn new(vocab_size: usize) -> Self {
        ClassifierConfig {
            vocab_size,
            d_emb: 256,
            hidden: 300,
            dense: 100,
            dropout: 0.1,
            max_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.d_emb, self.hidden, self.dense, self.max_len];
        if dims.contains(&0) {
            return Err(Error::Config(format!("classifier dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameter ids of one LSTM layer, in [`GATES`] order.
#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

/// LSTM weights on a tape: input weights `w` (`[d_in, H]`), recurrent
/// weights `u` (`[H, H]`) and biases `b` (`[H]`), in [`GATES`] order.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl LstmVars {
    pub fn from_bound(ids: &LstmIds, bound: &Bound) -> Self {
        LstmVars {
            w: ids.w.map(|id| bound.get(id)),
            u: ids.u.map(|id| bound.get(id)),
            b: ids.b.map(|id| bound.get(id)),
        }
    }
}

/// One LSTM step on `[1, d_in]` input and `[1, H]` state rows.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), TensorError> {
    let mut pre = [x; 4];
    for k in 0..4 {
        let wx = tape.matmul(x, p.w[k])?;
        let uh = tape.matmul(h_prev, p.u[k])?;
        let s = tape.add(wx, uh)?;
        pre[k] = tape.add(s, p.b[k])?;
    }
    let i = tape.sigmoid(pre[0])?;
    let f = tape.sigmoid(pre[1])?;
    let o = tape.sigmoid(pre[2])?;
    let g = tape.tanh(pre[3])?;
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Final hidden state after running the LSTM over the rows of `xs`
/// (`[L, d_in]`). The input projections of all steps are computed in one
/// product against the gate matrices laid side by side.
fn lstm_sequence(tape: &mut Tape, p: &LstmVars, xs: Var, hidden: usize) -> Result<Var, TensorError> {
    let steps = tape.value(xs).shape()[0];
    let w_all = tape.concat(&p.w, 1)?;
    let u_all = tape.concat(&p.u, 1)?;
    let b_all = tape.concat(&p.b, 0)?;
    let xw = tape.matmul(xs, w_all)?;
    let xw = tape.add(xw, b_all)?;
    let mut h = tape.constant(Tensor::zeros(vec![1, hidden]));
    let mut c = h;
    for t in 0..steps {
        let xt = tape.slice(xw, 0, t, 1)?;
        let uh = tape.matmul(h, u_all)?;
        let pre = tape.add(xt, uh)?;
        let gate = |tape: &mut Tape, k: usize| tape.slice(pre, 1, k * hidden, hidden);
        let (pi, pf, po, pg) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
        let i = tape.sigmoid(pi)?;
        let f = tape.sigmoid(pf)?;
        let o = tape.sigmoid(po)?;
        let g = tape.tanh(pg)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(o, tc)?;
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug)]
struct Ids {
    emb: ParamId,
    lstm: LstmIds,
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Classifier {
    config: ClassifierConfig,
    params: ParamStore,
    ids: Ids,
}

/// Result of [`predict_emotion`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionPrediction {
    pub emotion: CoarseEmotion,
    pub probs: Vec<Float>,
    /// Set when the utterance normalized to nothing and the uniform prior was
    /// returned.
    pub empty_input: bool,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let (v, d, h) = (config.vocab_size, config.d_emb, config.hidden);
        let mut params = ParamStore::new();
        let mut uni = |params: &mut ParamStore, name: String, shape: &[usize]| {
            params.add(name, init_uniform(&mut rng, shape, INIT_BOUND))
        };
        let emb = uni(&mut params, "emb".into(), &[v, d]);
        let w = GATES.map(|g| uni(&mut params, format!("lstm.w_{g}"), &[d, h]));
        let u = GATES.map(|g| uni(&mut params, format!("lstm.u_{g}"), &[h, h]));
        let b = GATES.map(|g| uni(&mut params, format!("lstm.b_{g}"), &[h]));
        let dense_w = uni(&mut params, "dense.w".into(), &[h, config.dense]);
        let dense_b = uni(&mut params, "dense.b".into(), &[config.dense]);
        let out_w = uni(&mut params, "out.w".into(), &[config.dense, NUM_EMOTIONS]);
        let out_b = uni(&mut params, "out.b".into(), &[NUM_EMOTIONS]);
        let mut forget = params.get(b[1]).clone();
        forget.data_mut().iter_mut().for_each(|x| *x += FORGET_BIAS);
        params.set("lstm.b_f", forget)?;
        Ok(Classifier {
            config,
            params,
            ids: Ids {
                emb,
                lstm: LstmIds { w, u, b },
                dense_w,
                dense_b,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuilds a classifier from stored tensors; every parameter of the
    /// configured architecture must be present with the right shape.
    pub fn from_params(config: ClassifierConfig, stored: &ParamStore) -> Result<Self> {
        let mut model = Classifier::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Config(format!(
                "classifier expects {} tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for (name, t) in stored.iter() {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Unnormalized scores `[1, 8]` for one token sequence.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var, TensorError> {
        if ids.is_empty() {
            return Err(TensorError::Invalid("classify: empty token sequence".into()));
        }
        let ids = &ids[ids.len().saturating_sub(self.config.max_len)..];
        let xs = tape.embedding(bound.get(self.ids.emb), ids)?;
        let lstm = LstmVars::from_bound(&self.ids.lstm, bound);
        let h = lstm_sequence(tape, &lstm, xs, self.config.hidden)?;
        let d = tape.matmul(h, bound.get(self.ids.dense_w))?;
        let d = tape.add(d, bound.get(self.ids.dense_b))?;
        let d = tape.relu(d)?;
        let d = tape.dropout(d, self.config.dropout, rng, training)?;
        let o = tape.matmul(d, bound.get(self.ids.out_w))?;
        tape.add(o, bound.get(self.ids.out_b))
    }

    /// Mean cross-entropy of a set of examples as a tape scalar.
    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &[&UtterancePair],
        rng: &mut Rng,
        training: bool,
    ) -> Result<Var, TensorError> {
        let mut rows = Vec::with_capacity(batch.len());
        for p in batch {
            rows.push(self.logits(tape, bound, &p.input_ids, rng, training)?);
        }
        let logits = tape.concat(&rows, 0)?;
        let targets: Vec<usize> = batch.iter().map(|p| p.coarse_emotion_id).collect();
        tape.cross_entropy(logits, &targets, None)
    }

    /// Probabilities over the 8 coarse emotions.
    pub fn classify(&self, ids: &[usize]) -> Result<Vec<Float>, TensorError> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let logits = self.logits(&mut tape, &bound, ids, &mut Rng::new(0), false)?;
        let probs = tape.softmax(logits, 1)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// Inference-mode mean loss and accuracy over `pairs`.
    pub fn evaluate(&self, pairs: &[UtterancePair]) -> Result<(Float, Float), TensorError> {
        let mut total = 0.0;
        let mut correct = 0;
        for p in pairs {
            let probs = self.classify(&p.input_ids)?;
            total -= probs[p.coarse_emotion_id].ln();
            if argmax(&probs) == p.coarse_emotion_id {
                correct += 1;
            }
        }
        let n = pairs.len() as Float;
        Ok((total / n, correct as Float / n))
    }
}

fn validate_corpus(corpus: &[UtterancePair]) -> Result<()> {
    if corpus.is_empty() {
        return Err(DataError::Invalid("training corpus is empty".into()).into());
    }
    for (row, p) in corpus.iter().enumerate() {
        if p.coarse_emotion_id >= NUM_EMOTIONS {
            return Err(DataError::Malformed {
                row: row + 1,
                message: format!("emotion id {} outside [0, {NUM_EMOTIONS})", p.coarse_emotion_id),
            }
            .into());
        }
        if p.input_ids.is_empty() {
            return Err(DataError::EmptyUtterance { row: row + 1 }.into());
        }
    }
    Ok(())
}

/// Trains a fresh classifier. The history holds one entry per epoch with the
/// inference-mode loss and accuracy over the whole corpus after that epoch.
pub fn train_classifier(
    corpus: &[UtterancePair],
    config: ClassifierConfig,
    train: &TrainConfig,
) -> Result<(Classifier, Vec<EpochMetrics>, AdamState)> {
    train_classifier_with(corpus, config, train, |_| {})
}

/// [`train_classifier`] with a callback after every epoch.
pub fn train_classifier_with(
    corpus: &[UtterancePair],
    config: ClassifierConfig,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Classifier, Vec<EpochMetrics>, AdamState)> {
    validate_corpus(corpus)?;
    train.validate()?;
    let mut rng = Rng::new(train.seed);
    let mut model = Classifier::new(config, rng.next_u64())?;
    let mut state = model.params.new_optimizer(train.adam);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 1..=train.epochs {
        for batch in epoch_batches(corpus.len(), train.batch_size, &mut rng) {
            let examples: Vec<&UtterancePair> = batch.iter().map(|&i| &corpus[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let loss = model.loss(&mut tape, &bound, &examples, &mut rng, true)?;
            let grads = tape.backward(loss)?;
            model.params.apply(&bound, &grads, &mut state)?;
        }
        let (loss, accuracy) = model.evaluate(corpus)?;
        let metrics = EpochMetrics {
            epoch,
            loss,
            accuracy: Some(accuracy),
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((model, history, state))
}

/// Normalizes, tokenizes and classifies an utterance; ties go to the lowest
/// emotion id.
pub fn predict_emotion(utterance: &str, model: &Classifier, vocab: &Vocabulary) -> Result<EmotionPrediction, TensorError> {
    let text = normalize_text(utterance);
    if text.is_empty() {
        let probs = vec![1.0 / NUM_EMOTIONS as Float; NUM_EMOTIONS];
        return Ok(EmotionPrediction {
            emotion: CoarseEmotion::ALL[argmax(&probs)],
            probs,
            empty_input: true,
        });
    }
    let mut ids = tokenize(&text, vocab);
    truncate_left(&mut ids, model.config.max_len);
    let probs = model.classify(&ids)?;
    Ok(EmotionPrediction {
        emotion: CoarseEmotion::ALL[argmax(&probs)],
        probs,
        empty_input: false,
    })
}
