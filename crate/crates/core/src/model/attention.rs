//! Attention blocks: relative-position multi-head self-attention with an
//! optional detached memory, plain content cross-attention, the position-wise
//! feed-forward block and layer normalization.
//!
//! Relative scores follow the Transformer-XL decomposition. For query row `i`
//! (absolute position `M + i`) and key `j` at distance `δ = M + i - j`,
//!
//! ```text
//! score(i, j) = [(q_i + u) · k_j + (q_i + v) · (W_r R_δ)] / sqrt(d_head)
//! ```
//!
//! `R` is computed once for every distance from `M + L - 1` down to
//! `-(L - 1)` (negative distances only matter without the causal mask), and
//! the per-pair lookup is a single gather over the `[L, M + 2L - 1]` matrix of
//! position scores.

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

pub const LN_EPS: Float = 1e-5;
/// Added to masked scores; `exp` of it underflows to exactly zero.
const MASKED: Float = -1e30;

/// Dropout settings threaded through a forward pass.
pub struct Mode<'a> {
    pub rng: &'a mut Rng,
    pub dropout: Float,
    pub training: bool,
}

impl<'a> Mode<'a> {
    pub fn eval(rng: &'a mut Rng) -> Self {
        Mode {
            rng,
            dropout: 0.0,
            training: false,
        }
    }

    fn drop(&mut self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        tape.dropout(x, self.dropout, self.rng, self.training)
    }
}

/// Sinusoidal encodings for distances `hi, hi - 1, ..., lo` as rows of a
/// `[hi - lo + 1, d]` matrix. Row layout is all sines then all cosines, with
/// frequencies `1 / 10000^(2k / d)` for `k < d / 2`.
pub fn relative_encodings(d: usize, hi: i64, lo: i64) -> Tensor {
    assert!(d.is_multiple_of(2) && hi >= lo, "relative_encodings: d={d}, range {hi}..{lo}");
    let half = d / 2;
    let inv_freq: Vec<Float> = (0..half)
        .map(|k| 1.0 / (10000.0 as Float).powf(2.0 * k as Float / d as Float))
        .collect();
    let rows = (hi - lo + 1) as usize;
    let mut data = Vec::with_capacity(rows * d);
    for r in 0..rows {
        let pos = (hi - r as i64) as Float;
        data.extend(inv_freq.iter().map(|f| (pos * f).sin()));
        data.extend(inv_freq.iter().map(|f| (pos * f).cos()));
    }
    Tensor::new(vec![rows, d], data).expect("relative_encodings shape")
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Row standardization followed by the learned scale and shift.
pub fn layer_norm(tape: &mut Tape, x: Var, p: &LayerNormVars) -> Result<Var, TensorError> {
    let z = tape.standardize(x, LN_EPS)?;
    let z = tape.mul(z, p.gamma)?;
    tape.add(z, p.beta)
}

/// Parameters of one relative self-attention sublayer. Projections are
/// `[d, d]`; `u` and `v` are `[n_heads, d_head]`.
#[derive(Clone, Copy, Debug)]
pub struct RelAttnVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub o: Var,
    pub r: Var,
    pub u: Var,
    pub v_bias: Var,
    pub ln: LayerNormVars,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossAttnVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub o: Var,
    pub ln: LayerNormVars,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln: LayerNormVars,
}

fn head_split(tape: &mut Tape, x: Var, head: usize, d_head: usize) -> Result<Var, TensorError> {
    tape.slice(x, 1, head * d_head, d_head)
}

fn merge_heads(tape: &mut Tape, heads: Vec<Var>) -> Result<Var, TensorError> {
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        tape.concat(&heads, 1)
    }
}

fn model_dims(tape: &Tape, h: Var, n_heads: usize) -> Result<(usize, usize), TensorError> {
    let t = tape.value(h);
    if t.rank() != 2 {
        return Err(TensorError::Invalid(format!("attention input must be rank 2, got {:?}", t.shape())));
    }
    let (l, d) = (t.shape()[0], t.shape()[1]);
    if n_heads == 0 || d % n_heads != 0 {
        return Err(TensorError::Invalid(format!("d_model {d} not divisible by {n_heads} heads")));
    }
    Ok((l, d))
}

/// Relative multi-head self-attention over `concat(mem, h)` followed by
/// residual and layer norm: `LN(h + dropout(attn(h)))`.
///
/// `mem` rows are placed on the tape as constants, so no gradient reaches
/// whatever produced them. With `causal`, query `i` sees all memory rows and
/// segment rows `0..=i`.
#[allow(clippy::too_many_arguments)]
pub fn rel_attention(
    tape: &mut Tape,
    p: &RelAttnVars,
    h: Var,
    mem: Option<&Tensor>,
    mem_len: usize,
    n_heads: usize,
    causal: bool,
    mode: &mut Mode,
) -> Result<Var, TensorError> {
    let (l, d) = model_dims(tape, h, n_heads)?;
    let (m, cat) = match mem {
        Some(t) => {
            if t.rank() != 2 || t.shape()[1] != d {
                return Err(TensorError::Shape {
                    op: "rel_attention memory",
                    lhs: t.shape().to_vec(),
                    rhs: tape.value(h).shape().to_vec(),
                });
            }
            if t.shape()[0] > mem_len {
                return Err(TensorError::Invalid(format!(
                    "memory has {} rows, more than mem_len {mem_len}",
                    t.shape()[0]
                )));
            }
            let mv = tape.constant(t.clone());
            (t.shape()[0], tape.concat(&[mv, h], 0)?)
        }
        None => (0, h),
    };
    let keys = m + l;
    let n_rel = m + 2 * l - 1;
    let d_head = d / n_heads;

    let q = tape.matmul(h, p.q)?;
    let k = tape.matmul(cat, p.k)?;
    let v = tape.matmul(cat, p.v)?;
    let r = tape.constant(relative_encodings(d, (m + l - 1) as i64, -(l as i64 - 1)));
    let rk = tape.matmul(r, p.r)?;

    // Position score for (i, j) lives at column L - 1 - i + j of the
    // distance-indexed matrix.
    let shift: Vec<usize> = (0..l)
        .flat_map(|i| (0..keys).map(move |j| i * n_rel + (l - 1 - i + j)))
        .collect();
    let mask = if causal {
        let data = (0..l)
            .flat_map(|i| (0..keys).map(move |j| if j > m + i { MASKED } else { 0.0 }))
            .collect();
        Some(tape.constant(Tensor::new(vec![l, keys], data)?))
    } else {
        None
    };
    let scale = 1.0 / (d_head as Float).sqrt();

    let mut heads = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let qh = head_split(tape, q, hd, d_head)?;
        let kh = head_split(tape, k, hd, d_head)?;
        let vh = head_split(tape, v, hd, d_head)?;
        let rh = head_split(tape, rk, hd, d_head)?;
        let u = tape.slice(p.u, 0, hd, 1)?;
        let vb = tape.slice(p.v_bias, 0, hd, 1)?;

        let qu = tape.add(qh, u)?;
        let kt = tape.transpose(kh)?;
        let content = tape.matmul(qu, kt)?;
        let qv = tape.add(qh, vb)?;
        let rt = tape.transpose(rh)?;
        let by_distance = tape.matmul(qv, rt)?;
        let position = tape.gather(by_distance, shift.clone(), vec![l, keys])?;

        let scores = tape.add(content, position)?;
        let mut scores = tape.scale(scores, scale)?;
        if let Some(mask) = mask {
            scores = tape.add(scores, mask)?;
        }
        let probs = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let merged = merge_heads(tape, heads)?;
    let out = tape.matmul(merged, p.o)?;
    let out = mode.drop(tape, out)?;
    let res = tape.add(h, out)?;
    layer_norm(tape, res, &p.ln)
}

/// Content-only multi-head attention from `x` to `context`, with residual and
/// layer norm.
pub fn cross_attention(
    tape: &mut Tape,
    p: &CrossAttnVars,
    x: Var,
    context: Var,
    n_heads: usize,
    mode: &mut Mode,
) -> Result<Var, TensorError> {
    let (_, d) = model_dims(tape, x, n_heads)?;
    let d_head = d / n_heads;
    let q = tape.matmul(x, p.q)?;
    let k = tape.matmul(context, p.k)?;
    let v = tape.matmul(context, p.v)?;
    let scale = 1.0 / (d_head as Float).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let qh = head_split(tape, q, hd, d_head)?;
        let kh = head_split(tape, k, hd, d_head)?;
        let vh = head_split(tape, v, hd, d_head)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let merged = merge_heads(tape, heads)?;
    let out = tape.matmul(merged, p.o)?;
    let out = mode.drop(tape, out)?;
    let res = tape.add(x, out)?;
    layer_norm(tape, res, &p.ln)
}

/// `LN(x + dropout(relu(x W1 + b1) W2 + b2))`.
pub fn feed_forward(tape: &mut Tape, p: &FfnVars, x: Var, mode: &mut Mode) -> Result<Var, TensorError> {
    let a = tape.matmul(x, p.w1)?;
    let a = tape.add(a, p.b1)?;
    let a = tape.relu(a)?;
    let b = tape.matmul(a, p.w2)?;
    let b = tape.add(b, p.b2)?;
    let b = mode.drop(tape, b)?;
    let res = tape.add(x, b)?;
    layer_norm(tape, res, &p.ln)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings_at_zero_distance() {
        let r = relative_encodings(6, 2, -1);
        assert_eq!(r.shape(), &[4, 6]);
        // Row 2 is distance 0: sines 0, cosines 1.
        assert_eq!(r.row_slice(2), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!((r.at(0, 0) - (2.0 as Float).sin()).abs() < 1e-15);
        assert!((r.at(3, 0) - (-1.0 as Float).sin()).abs() < 1e-15);
    }
}
