//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod grads;

use std::collections::HashMap;

use emoxl::{Float, Rng, Tensor};

pub type Mat = Vec<Vec<Float>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2();
    (0..r).map(|i| (0..c).map(|j| t.at(i, j)).collect()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn random_mat(rng: &mut Rng, rows: usize, cols: usize, scale: Float) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| (rng.normal() as Float) * scale).collect())
        .collect()
}

fn vec_mat(x: &[Float], w: &Mat) -> Vec<Float> {
    let cols = w[0].len();
    (0..cols).map(|j| (0..x.len()).map(|k| x[k] * w[k][j]).sum()).collect()
}

fn layer_norm_row(x: &[Float], gamma: &[Float], beta: &[Float]) -> Vec<Float> {
    let n = x.len() as Float;
    let mean = x.iter().sum::<Float>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / n;
    let d = var.sqrt() + 1e-5;
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) / d * g + b)
        .collect()
}

/// Parameters of one relative self-attention sublayer as plain matrices.
pub struct AttnParams {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub o: Mat,
    pub r: Mat,
    /// `[n_heads][d_head]`
    pub u: Mat,
    pub v_bias: Mat,
    pub gamma: Vec<Float>,
    pub beta: Vec<Float>,
}

impl AttnParams {
    pub fn random(rng: &mut Rng, d: usize, n_heads: usize) -> Self {
        let s = 1.0 / (d as Float).sqrt();
        AttnParams {
            q: random_mat(rng, d, d, s),
            k: random_mat(rng, d, d, s),
            v: random_mat(rng, d, d, s),
            o: random_mat(rng, d, d, s),
            r: random_mat(rng, d, d, s),
            u: random_mat(rng, n_heads, d / n_heads, 0.5),
            v_bias: random_mat(rng, n_heads, d / n_heads, 0.5),
            gamma: random_mat(rng, 1, d, 0.3)[0].iter().map(|g| 1.0 + g).collect(),
            beta: random_mat(rng, 1, d, 0.3).remove(0),
        }
    }
}

/// The sinusoid for a single signed distance, computed directly.
pub fn sinusoid(distance: i64, d: usize) -> Vec<Float> {
    let half = d / 2;
    let angle = |k: usize| distance as Float / (10000.0 as Float).powf(2.0 * k as Float / d as Float);
    (0..half).map(|k| angle(k).sin()).chain((0..half).map(|k| angle(k).cos())).collect()
}

/// Relative multi-head attention computed pair by pair: the full
/// `(M + L)`-key score matrix with an explicit distance for every pair.
pub fn naive_rel_attention(h: &Mat, mem: &Mat, p: &AttnParams, n_heads: usize, causal: bool) -> Mat {
    let (l, m) = (h.len(), mem.len());
    let d = h[0].len();
    let dh = d / n_heads;
    let cat: Mat = mem.iter().chain(h.iter()).cloned().collect();
    let q: Mat = h.iter().map(|x| vec_mat(x, &p.q)).collect();
    let k: Mat = cat.iter().map(|x| vec_mat(x, &p.k)).collect();
    let v: Mat = cat.iter().map(|x| vec_mat(x, &p.v)).collect();
    let scale = 1.0 / (dh as Float).sqrt();

    let mut out = Vec::with_capacity(l);
    for i in 0..l {
        let mut merged = vec![0.0; d];
        for hd in 0..n_heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut scores = Vec::new();
            let mut visible = Vec::new();
            for j in 0..m + l {
                if causal && j > m + i {
                    continue;
                }
                let dist = (m + i) as i64 - j as i64;
                let rk = vec_mat(&sinusoid(dist, d), &p.r);
                let mut s = 0.0;
                for (c, col) in cols.clone().enumerate() {
                    s += (q[i][col] + p.u[hd][c]) * k[j][col];
                    s += (q[i][col] + p.v_bias[hd][c]) * rk[col];
                }
                scores.push(s * scale);
                visible.push(j);
            }
            let top = scores.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
            let exps: Vec<Float> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: Float = exps.iter().sum();
            for (w, &j) in exps.iter().zip(&visible) {
                for col in cols.clone() {
                    merged[col] += w / z * v[j][col];
                }
            }
        }
        let proj = vec_mat(&merged, &p.o);
        let res: Vec<Float> = h[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
        out.push(layer_norm_row(&res, &p.gamma, &p.beta));
    }
    out
}

/// Sentence BLEU-4 from explicit n-gram hash maps, with the same smoothing
/// and brevity penalty conventions as the library.
pub fn brute_bleu(cand: &[u32], reference: &[u32]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let mut ref_counts: HashMap<Vec<u32>, usize> = HashMap::new();
        if reference.len() >= n {
            for s in 0..=reference.len() - n {
                *ref_counts.entry(reference[s..s + n].to_vec()).or_default() += 1;
            }
        }
        let mut cand_counts: HashMap<Vec<u32>, usize> = HashMap::new();
        if cand.len() >= n {
            for s in 0..=cand.len() - n {
                *cand_counts.entry(cand[s..s + n].to_vec()).or_default() += 1;
            }
        }
        let total: usize = cand_counts.values().sum();
        let mut clipped = 0;
        for (gram, count) in &cand_counts {
            clipped += (*count).min(*ref_counts.get(gram).unwrap_or(&0));
        }
        let p = if clipped == 0 { 1e-9 } else { clipped as f64 / total as f64 };
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}
