//! Emotion-aware Transformer-XL encoder-decoder.
//!
//! The encoder input is `standardize(word_emb[t] + emo_emb[e])` per token.
//! Encoder layers use relative self-attention over an optional detached
//! memory of the previous segment; decoder layers use causal relative
//! self-attention, content cross-attention to the encoder output and a ReLU
//! feed-forward block, each followed by residual and layer norm.

pub mod attention;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{DataError, Error, Result, TensorError};
use crate::optim::AdamState;
use crate::params::{init_normal, Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{argmax, Float, Tensor};
use crate::text::pairs::UtterancePair;
use crate::text::taxonomy::NUM_EMOTIONS;
use crate::text::vocab::{TokenId, BOS, EOS, PAD};
use crate::train::{epoch_batches, EpochMetrics, TrainConfig};

pub use attention::{
    cross_attention, feed_forward, layer_norm, rel_attention, relative_encodings, CrossAttnVars, FfnVars,
    LayerNormVars, Mode, RelAttnVars,
};

pub const FUSION_EPS: Float = 1e-5;
const PROJ_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub mem_len: usize,
    pub dropout: Float,
    pub max_gen_len: usize,
    pub max_len: usize,
    /// When false the emotion vector is replaced by zeros before
    /// normalization (the ablated model).
    pub emotion_fusion: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 8,
            d_model: 256,
            d_ff: 100,
            mem_len: 32,
            dropout: 0.1,
            max_gen_len: 40,
            max_len: 64,
            emotion_fusion: true,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.n_enc_layers,
            self.n_dec_layers,
            self.n_heads,
            self.d_model,
            self.d_ff,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model {} must be even", self.d_model)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `standardize(w_t + e)` for every row of `word_embs` (`[L, d]`), with
/// `e` of length `d` and `eps = 1e-5` added to the population std.
pub fn fuse_emotion(tape: &mut Tape, word_embs: Var, emo: Var) -> Result<Var, TensorError> {
    let (w, e) = (tape.value(word_embs), tape.value(emo));
    let d = *w.shape().last().unwrap();
    if e.len() != d || e.rank() > 2 || w.rank() != 2 {
        return Err(TensorError::Shape {
            op: "fuse_emotion",
            lhs: w.shape().to_vec(),
            rhs: e.shape().to_vec(),
        });
    }
    let z = tape.add(word_embs, emo)?;
    tape.standardize(z, FUSION_EPS)
}

/// Per encoder layer, the detached hidden rows of the previous segment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryState {
    layers: Vec<Option<Tensor>>,
}

impl MemoryState {
    pub fn empty(n_layers: usize) -> Self {
        MemoryState {
            layers: vec![None; n_layers],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> Option<&Tensor> {
        self.layers.get(l).and_then(Option::as_ref)
    }

    pub fn rows(&self, l: usize) -> usize {
        self.layer(l).map_or(0, |t| t.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }
}

#[derive(Clone, Copy, Debug)]
struct LnIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct RelAttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    r: ParamId,
    u: ParamId,
    v_bias: ParamId,
    ln: LnIds,
}

#[derive(Clone, Copy, Debug)]
struct CrossAttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    ln: LnIds,
}

#[derive(Clone, Copy, Debug)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln: LnIds,
}

#[derive(Clone, Copy, Debug)]
struct EncLayerIds {
    attn: RelAttnIds,
    ffn: FfnIds,
}

#[derive(Clone, Copy, Debug)]
struct DecLayerIds {
    attn: RelAttnIds,
    cross: CrossAttnIds,
    ffn: FfnIds,
}

#[derive(Clone, Debug)]
struct Ids {
    word_emb: ParamId,
    emo_emb: ParamId,
    enc: Vec<EncLayerIds>,
    dec: Vec<DecLayerIds>,
    out_w: ParamId,
    out_b: ParamId,
}

impl LnIds {
    fn bind(&self, b: &Bound) -> LayerNormVars {
        LayerNormVars {
            gamma: b.get(self.gamma),
            beta: b.get(self.beta),
        }
    }
}

impl RelAttnIds {
    fn bind(&self, b: &Bound) -> RelAttnVars {
        RelAttnVars {
            q: b.get(self.q),
            k: b.get(self.k),
            v: b.get(self.v),
            o: b.get(self.o),
            r: b.get(self.r),
            u: b.get(self.u),
            v_bias: b.get(self.v_bias),
            ln: self.ln.bind(b),
        }
    }
}

impl CrossAttnIds {
    fn bind(&self, b: &Bound) -> CrossAttnVars {
        CrossAttnVars {
            q: b.get(self.q),
            k: b.get(self.k),
            v: b.get(self.v),
            o: b.get(self.o),
            ln: self.ln.bind(b),
        }
    }
}

impl FfnIds {
    fn bind(&self, b: &Bound) -> FfnVars {
        FfnVars {
            w1: b.get(self.w1),
            b1: b.get(self.b1),
            w2: b.get(self.w2),
            b2: b.get(self.b2),
            ln: self.ln.bind(b),
        }
    }
}

struct Builder {
    params: ParamStore,
    rng: Rng,
    d: usize,
}

impl Builder {
    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = init_normal(&mut self.rng, shape, std);
        self.params.add(name, t)
    }

    fn full(&mut self, name: String, shape: &[usize], value: Float) -> ParamId {
        self.params.add(name, Tensor::full(shape.to_vec(), value))
    }

    fn ln(&mut self, prefix: &str) -> LnIds {
        let d = self.d;
        LnIds {
            gamma: self.full(format!("{prefix}.gamma"), &[d], 1.0),
            beta: self.full(format!("{prefix}.beta"), &[d], 0.0),
        }
    }

    fn rel_attn(&mut self, prefix: &str, n_heads: usize) -> RelAttnIds {
        let d = self.d;
        let proj = |b: &mut Self, n: &str| b.normal(format!("{prefix}.{n}"), &[d, d], PROJ_STD);
        let (q, k, v, o, r) = (proj(self, "q"), proj(self, "k"), proj(self, "v"), proj(self, "o"), proj(self, "r"));
        RelAttnIds {
            q,
            k,
            v,
            o,
            r,
            u: self.normal(format!("{prefix}.u"), &[n_heads, d / n_heads], PROJ_STD),
            v_bias: self.normal(format!("{prefix}.v_bias"), &[n_heads, d / n_heads], PROJ_STD),
            ln: self.ln(&format!("{prefix}.ln")),
        }
    }

    fn cross_attn(&mut self, prefix: &str) -> CrossAttnIds {
        let d = self.d;
        let proj = |b: &mut Self, n: &str| b.normal(format!("{prefix}.{n}"), &[d, d], PROJ_STD);
        let (q, k, v, o) = (proj(self, "q"), proj(self, "k"), proj(self, "v"), proj(self, "o"));
        CrossAttnIds {
            q,
            k,
            v,
            o,
            ln: self.ln(&format!("{prefix}.ln")),
        }
    }

    fn ffn(&mut self, prefix: &str, d_ff: usize) -> FfnIds {
        let d = self.d;
        FfnIds {
            w1: self.normal(format!("{prefix}.w1"), &[d, d_ff], PROJ_STD),
            b1: self.full(format!("{prefix}.b1"), &[d_ff], 0.0),
            w2: self.normal(format!("{prefix}.w2"), &[d_ff, d], PROJ_STD),
            b2: self.full(format!("{prefix}.b2"), &[d], 0.0),
            ln: self.ln(&format!("{prefix}.ln")),
        }
    }
}

/// Sampling settings for [`Chatbot::generate`]. Without `top_k` decoding is
/// greedy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerateOptions {
    pub max_gen_len: usize,
    pub top_k: Option<usize>,
    pub temperature: Float,
    pub seed: u64,
}

impl GenerateOptions {
    pub fn greedy(max_gen_len: usize) -> Self {
        GenerateOptions {
            max_gen_len,
            top_k: None,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Chatbot {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl Chatbot {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut b = Builder {
            params: ParamStore::new(),
            rng: Rng::new(seed),
            d,
        };
        let word_emb = b.normal("word_emb".into(), &[config.vocab_size, d], 1.0);
        let emo_emb = b.normal("emo_emb".into(), &[NUM_EMOTIONS, d], 1.0);
        let enc = (0..config.n_enc_layers)
            .map(|l| EncLayerIds {
                attn: b.rel_attn(&format!("enc.{l}.attn"), config.n_heads),
                ffn: b.ffn(&format!("enc.{l}.ffn"), config.d_ff),
            })
            .collect();
        let dec = (0..config.n_dec_layers)
            .map(|l| DecLayerIds {
                attn: b.rel_attn(&format!("dec.{l}.attn"), config.n_heads),
                cross: b.cross_attn(&format!("dec.{l}.cross")),
                ffn: b.ffn(&format!("dec.{l}.ffn"), config.d_ff),
            })
            .collect();
        let out_w = b.normal("out.w".into(), &[d, config.vocab_size], PROJ_STD);
        let out_b = b.full("out.b".into(), &[config.vocab_size], 0.0);
        Ok(Chatbot {
            config,
            params: b.params,
            ids: Ids {
                word_emb,
                emo_emb,
                enc,
                dec,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuilds a chatbot from stored tensors matching `config`.
    pub fn from_params(config: ModelConfig, stored: &ParamStore) -> Result<Self> {
        let mut model = Chatbot::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Config(format!(
                "chatbot expects {} tensors, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        for (name, t) in stored.iter() {
            model.params.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn empty_memory(&self) -> MemoryState {
        MemoryState::empty(self.config.n_enc_layers)
    }

    fn mode<'a>(&self, rng: &'a mut Rng, training: bool) -> Mode<'a> {
        Mode {
            rng,
            dropout: self.config.dropout,
            training,
        }
    }

    /// Emotion-fused input embeddings `[L, d]`.
    pub fn embed_input(&self, tape: &mut Tape, bound: &Bound, ids: &[TokenId], emotion: usize) -> Result<Var, TensorError> {
        if emotion >= NUM_EMOTIONS {
            return Err(TensorError::Invalid(format!("emotion id {emotion} outside [0, {NUM_EMOTIONS})")));
        }
        let words = tape.embedding(bound.get(self.ids.word_emb), ids)?;
        let emo = if self.config.emotion_fusion {
            tape.embedding(bound.get(self.ids.emo_emb), &[emotion])?
        } else {
            tape.constant(Tensor::zeros(vec![1, self.config.d_model]))
        };
        fuse_emotion(tape, words, emo)
    }

    /// Runs the encoder stack on fused embeddings. The returned memory holds,
    /// per layer, the last `min(L, mem_len)` rows of that layer's input.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        fused: Var,
        mem: &MemoryState,
        mode: &mut Mode,
    ) -> Result<(Var, MemoryState), TensorError> {
        if mem.n_layers() != self.config.n_enc_layers {
            return Err(TensorError::Invalid(format!(
                "memory has {} layers, encoder has {}",
                mem.n_layers(),
                self.config.n_enc_layers
            )));
        }
        let len = tape.value(fused).shape()[0];
        let keep = len.min(self.config.mem_len);
        let mut h = fused;
        let mut layers = Vec::with_capacity(self.ids.enc.len());
        for (l, ids) in self.ids.enc.iter().enumerate() {
            layers.push(if keep == 0 {
                None
            } else {
                let rows = tape.slice(h, 0, len - keep, keep)?;
                Some(tape.value(rows).clone())
            });
            let attn = ids.attn.bind(bound);
            h = rel_attention(
                tape,
                &attn,
                h,
                mem.layer(l),
                self.config.mem_len,
                self.config.n_heads,
                false,
                mode,
            )?;
            h = feed_forward(tape, &ids.ffn.bind(bound), h, mode)?;
        }
        Ok((h, MemoryState { layers }))
    }

    /// Embeds, fuses and encodes one utterance.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[TokenId],
        emotion: usize,
        mem: &MemoryState,
        mode: &mut Mode,
    ) -> Result<(Var, MemoryState), TensorError> {
        let fused = self.embed_input(tape, bound, ids, emotion)?;
        self.encoder_forward(tape, bound, fused, mem, mode)
    }

    /// Next-token logits `[T, V]` for every position of `prefix`, which must
    /// start with BOS.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &[TokenId],
        enc: Var,
        mode: &mut Mode,
    ) -> Result<Var, TensorError> {
        match prefix.first() {
            None => return Err(TensorError::Invalid("decoder prefix is empty".into())),
            Some(&t) if t != BOS => {
                return Err(TensorError::Invalid(format!("decoder prefix must start with BOS, found {t}")))
            }
            _ => {}
        }
        let mut x = tape.embedding(bound.get(self.ids.word_emb), prefix)?;
        for ids in &self.ids.dec {
            x = rel_attention(
                tape,
                &ids.attn.bind(bound),
                x,
                None,
                0,
                self.config.n_heads,
                true,
                mode,
            )?;
            x = cross_attention(tape, &ids.cross.bind(bound), x, enc, self.config.n_heads, mode)?;
            x = feed_forward(tape, &ids.ffn.bind(bound), x, mode)?;
        }
        let logits = tape.matmul(x, bound.get(self.ids.out_w))?;
        tape.add(logits, bound.get(self.ids.out_b))
    }

    /// Teacher-forced mean token cross-entropy over a batch. Each pair is
    /// encoded with empty memory; PAD targets are ignored.
    pub fn loss(&self, tape: &mut Tape, bound: &Bound, batch: &[&UtterancePair], mode: &mut Mode) -> Result<Var, TensorError> {
        if batch.is_empty() {
            return Err(TensorError::Invalid("empty batch".into()));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for p in batch {
            if p.response_ids.is_empty() {
                return Err(TensorError::Invalid("empty response".into()));
            }
            let (enc, _) = self.encode(tape, bound, &p.input_ids, p.coarse_emotion_id, &self.empty_memory(), mode)?;
            let mut prefix = Vec::with_capacity(p.response_ids.len());
            prefix.push(BOS);
            prefix.extend_from_slice(&p.response_ids[..p.response_ids.len() - 1]);
            rows.push(self.decoder_forward(tape, bound, &prefix, enc, mode)?);
            targets.extend_from_slice(&p.response_ids);
        }
        let logits = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
        tape.cross_entropy(logits, &targets, Some(PAD))
    }

    /// One Adam step on `batch`; returns the loss before the step.
    pub fn train_step(&mut self, batch: &[&UtterancePair], state: &mut AdamState, rng: &mut Rng) -> Result<Float, TensorError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut mode = self.mode(rng, true);
        let loss = self.loss(&mut tape, &bound, batch, &mut mode)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        self.params.apply(&bound, &grads, state)?;
        Ok(value)
    }

    /// Decodes a response for `input_ids` under `emotion`, without memory.
    pub fn generate(&self, input_ids: &[TokenId], emotion: usize, opts: &GenerateOptions) -> Result<Vec<TokenId>> {
        self.generate_with_memory(input_ids, emotion, &self.empty_memory(), opts)
            .map(|(tokens, _)| tokens)
    }

    /// Like [`Chatbot::generate`], attending to `mem` and returning the memory
    /// for the next turn. The result excludes BOS and EOS; PAD and BOS are
    /// never emitted.
    pub fn generate_with_memory(
        &self,
        input_ids: &[TokenId],
        emotion: usize,
        mem: &MemoryState,
        opts: &GenerateOptions,
    ) -> Result<(Vec<TokenId>, MemoryState)> {
        if input_ids.iter().all(|&t| t == EOS || t == PAD) {
            return Err(DataError::Invalid("utterance is empty after tokenization".into()).into());
        }
        let ids = &input_ids[input_ids.len().saturating_sub(self.config.max_len)..];
        let mut rng = Rng::new(opts.seed);
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (enc, new_mem) = self.encode(&mut tape, &bound, ids, emotion, mem, &mut Mode::eval(&mut rng))?;
        let enc_value = tape.value(enc).clone();

        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < opts.max_gen_len {
            let mut tape = Tape::new();
            let bound = self.params.bind_frozen(&mut tape);
            let enc = tape.constant(enc_value.clone());
            let logits = self.decoder_forward(&mut tape, &bound, &prefix, enc, &mut Mode::eval(&mut rng))?;
            let last = tape.value(logits).row_slice(prefix.len() - 1).to_vec();
            let next = pick_token(&last, opts, &mut rng);
            if next == EOS {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok((out, new_mem))
    }
}

fn pick_token(logits: &[Float], opts: &GenerateOptions, rng: &mut Rng) -> TokenId {
    let mut scores = logits.to_vec();
    scores[PAD] = Float::NEG_INFINITY;
    scores[BOS] = Float::NEG_INFINITY;
    let Some(k) = opts.top_k.filter(|&k| k > 1) else {
        return argmax(&scores);
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len() - 2));
    let t = opts.temperature.max(1e-6);
    let top = scores[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| (((scores[i] - top) / t) as f64).exp()).collect();
    let mut draw = rng.uniform() * weights.iter().sum::<f64>();
    for (i, w) in order.iter().zip(&weights) {
        if draw < *w {
            return *i;
        }
        draw -= w;
    }
    order[order.len() - 1]
}

fn validate_corpus(corpus: &[UtterancePair], config: &ModelConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(DataError::Invalid("training corpus is empty".into()).into());
    }
    for (i, p) in corpus.iter().enumerate() {
        let row = i + 1;
        if p.coarse_emotion_id >= NUM_EMOTIONS {
            return Err(DataError::Malformed {
                row,
                message: format!("emotion id {} outside [0, {NUM_EMOTIONS})", p.coarse_emotion_id),
            }
            .into());
        }
        if p.input_ids.is_empty() || p.response_ids.is_empty() {
            return Err(DataError::EmptyUtterance { row }.into());
        }
        if let Some(&bad) = p.input_ids.iter().chain(&p.response_ids).find(|&&t| t >= config.vocab_size) {
            return Err(DataError::Malformed {
                row,
                message: format!("token id {bad} outside vocabulary of {}", config.vocab_size),
            }
            .into());
        }
    }
    Ok(())
}

/// Trains a fresh chatbot; the history holds the mean pre-step batch loss of
/// each epoch.
pub fn train_chatbot(
    corpus: &[UtterancePair],
    config: ModelConfig,
    train: &TrainConfig,
) -> Result<(Chatbot, Vec<EpochMetrics>, AdamState)> {
    train_chatbot_with(corpus, config, train, |_| {})
}

/// [`train_chatbot`] with a callback after every epoch.
pub fn train_chatbot_with(
    corpus: &[UtterancePair],
    config: ModelConfig,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Chatbot, Vec<EpochMetrics>, AdamState)> {
    validate_corpus(corpus, &config)?;
    train.validate()?;
    let mut rng = Rng::new(train.seed);
    let mut model = Chatbot::new(config, rng.next_u64())?;
    let mut state = model.params.new_optimizer(train.adam);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 1..=train.epochs {
        let batches = epoch_batches(corpus.len(), train.batch_size, &mut rng);
        let mut total = 0.0;
        for batch in &batches {
            let examples: Vec<&UtterancePair> = batch.iter().map(|&i| &corpus[i]).collect();
            total += model.train_step(&examples, &mut state, &mut rng)?;
        }
        let metrics = EpochMetrics {
            epoch,
            loss: total / batches.len() as Float,
            accuracy: None,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((model, history, state))
}
