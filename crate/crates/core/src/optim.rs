//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: Float,
    pub beta1: Float,
    pub beta2: Float,
    pub eps: Float,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<Float>>,
    v: Vec<Vec<Float>>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Vec<Float>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        let v = m.clone();
        AdamState { config, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update of every parameter. A `None` gradient counts as zero.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Invalid(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.len() != m.len() {
            return Err(TensorError::Invalid("adam_step: moment shape differs from parameter".into()));
        }
    }

    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (k, param) in params.iter_mut().enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        let theta = param.data_mut();
        for i in 0..theta.len() {
            let gi = grads[k].map_or(0.0, |g| g.data()[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
