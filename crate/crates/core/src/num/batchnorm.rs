//! Per-channel batch normalization over (batch × height × width).

use crate::error::{shape_err, Error, Result};
use crate::num::{Mode, Tensor3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    mode: Mode,
    normalized: Vec<Tensor3>,
    inv_std: Vec<f64>,
}

fn check_batch(batch: &[Tensor3], channels: usize) -> Result<()> {
    let first = batch.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    if first.channels != channels {
        return Err(shape_err(format!("{} channels, state has {channels}", first.channels)));
    }
    for t in batch {
        t.check_same_shape(first)?;
    }
    Ok(())
}

/// Train mode normalizes with batch statistics and updates the running
/// estimates (the running variance uses the unbiased estimate); infer mode
/// normalizes with the running estimates.
pub fn batchnorm_forward(
    batch: &[Tensor3],
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Vec<Tensor3>, BatchNormCache)> {
    check_batch(batch, state.channels())?;
    let channels = state.channels();
    let count = (batch.len() * batch[0].plane_len()) as f64;
    let mut inv_std = vec![0.0; channels];
    let mut normalized: Vec<Tensor3> = batch.to_vec();
    let mut out: Vec<Tensor3> = batch.to_vec();
    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = batch.iter().flat_map(|t| t.channel(c)).sum::<f64>() / count;
                let var = batch
                    .iter()
                    .flat_map(|t| t.channel(c))
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / count;
                let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean;
                state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
                (mean, var)
            }
            Mode::Infer => (state.running_mean[c], state.running_var[c]),
        };
        let is = 1.0 / (var + state.epsilon).sqrt();
        inv_std[c] = is;
        let (g, b) = (state.gamma[c], state.beta[c]);
        for (n, o) in normalized.iter_mut().zip(out.iter_mut()) {
            for (xn, y) in n.channel_mut(c).iter_mut().zip(o.channel_mut(c).iter_mut()) {
                *xn = (*xn - mean) * is;
                *y = g * *xn + b;
            }
        }
    }
    Ok((out, BatchNormCache { mode, normalized, inv_std }))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &[Tensor3],
    state: &BatchNormState,
    cache: &BatchNormCache,
) -> Result<(Vec<Tensor3>, Vec<f64>, Vec<f64>)> {
    check_batch(grad_out, state.channels())?;
    if grad_out.len() != cache.normalized.len() {
        return Err(shape_err(format!("{} grads for batch of {}", grad_out.len(), cache.normalized.len())));
    }
    let channels = state.channels();
    let count = (grad_out.len() * grad_out[0].plane_len()) as f64;
    let mut grad_in: Vec<Tensor3> = grad_out.to_vec();
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for c in 0..channels {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for (g, n) in grad_out.iter().zip(&cache.normalized) {
            for (&gv, &xn) in g.channel(c).iter().zip(n.channel(c)) {
                sum_g += gv;
                sum_gx += gv * xn;
            }
        }
        d_beta[c] = sum_g;
        d_gamma[c] = sum_gx;
        let scale = state.gamma[c] * cache.inv_std[c];
        for (gi, n) in grad_in.iter_mut().zip(&cache.normalized) {
            for (gv, &xn) in gi.channel_mut(c).iter_mut().zip(n.channel(c)) {
                *gv = match cache.mode {
                    Mode::Train => scale * (*gv - sum_g / count - xn * sum_gx / count),
                    Mode::Infer => scale * *gv,
                };
            }
        }
    }
    Ok((grad_in, d_gamma, d_beta))
}
