//! RAKI networks: stacked same-size convolutions mapping aliased
//! multi-coil k-space to one slice/coil's k-space.
//!
//! Layer layout for `num_layers = L`:
//! * `L == 1`: a single `k × k` convolution `in → 2`, no activation.
//! * `L >= 2`: `L - 2` hidden `k × k` convolutions with `num_filters`
//!   outputs, a `1 × 1` penultimate convolution with `penultimate_filters`
//!   outputs, and a final `k × k` convolution to 2 channels.
//!
//! Every layer but the last is followed by batch norm (optional), ReLU and
//! 50% dropout (optional). There are no biases.

mod bank;
pub mod io;
mod train;

pub use bank::{NetworkBank, Unaliaser};
pub use train::{train, Budget, TrainOptions, TrainRecord};

use crate::error::{shape_err, Error, Result};
use crate::num::{
    batchnorm_backward, batchnorm_forward, conv::conv2d_backward_input, conv::conv2d_backward_weights,
    conv2d_forward, dropout_backward, dropout_forward, relu_backward, relu_forward, BatchNormCache, BatchNormState,
    ConvWeights, DropoutMask, Mode, Tensor3,
};
use crate::par::Exec;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_layers: usize,
    pub filter_size: usize,
    pub num_filters: usize,
    pub penultimate_filters: usize,
    pub batch_norm: bool,
    pub dropout: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_layers == 0 {
            bad.push("num_layers must be >= 1".to_string());
        }
        if self.filter_size == 0 || self.filter_size.is_multiple_of(2) {
            bad.push(format!("filter_size {} must be odd", self.filter_size));
        }
        if self.num_layers > 2 && self.num_filters == 0 {
            bad.push("num_filters must be >= 1".into());
        }
        if self.num_layers >= 2 && self.penultimate_filters == 0 {
            bad.push("penultimate_filters must be >= 1".into());
        }
        if self.in_channels == 0 || !self.in_channels.is_multiple_of(2) {
            bad.push(format!("in_channels {} must be a positive even count", self.in_channels));
        }
        if self.out_channels != 2 {
            bad.push(format!("out_channels {} must be 2", self.out_channels));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// `(out, in, kernel)` of every convolution in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.filter_size;
        if self.num_layers == 1 {
            return vec![(self.out_channels, self.in_channels, k)];
        }
        let mut shapes = Vec::with_capacity(self.num_layers);
        let mut prev = self.in_channels;
        for _ in 0..self.num_layers - 2 {
            shapes.push((self.num_filters, prev, k));
            prev = self.num_filters;
        }
        shapes.push((self.penultimate_filters, prev, 1));
        shapes.push((self.out_channels, self.penultimate_filters, k));
        shapes
    }

    /// Total convolution weights, `Σ out × in × k²`.
    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i, k)| o * i * k * k).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: ConvWeights,
    pub batch_norm: Option<BatchNormState>,
    pub relu: bool,
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RakiNetwork {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
    /// Normalization applied to inputs at training time.
    pub scale: f64,
}

/// Per-layer intermediates kept for the backward pass.
struct LayerCache {
    input: Vec<Tensor3>,
    bn: Option<BatchNormCache>,
    pre_relu: Vec<Tensor3>,
    masks: Vec<Option<DropoutMask>>,
}

/// Gradients for every trainable block, in [`RakiNetwork::param_blocks`]
/// order.
pub struct Gradients(pub Vec<Vec<f64>>);

pub fn build_network(config: &NetworkConfig, rng: &mut Rng) -> Result<RakiNetwork> {
    config.validate()?;
    let shapes = config.layer_shapes();
    let last = shapes.len() - 1;
    let layers = shapes
        .iter()
        .enumerate()
        .map(|(l, &(o, i, k))| {
            let hidden = l != last;
            Ok(Layer {
                weights: ConvWeights::init_uniform(o, i, k, rng)?,
                batch_norm: (hidden && config.batch_norm).then(|| BatchNormState::new(o)),
                relu: hidden,
                dropout: (hidden && config.dropout).then_some(DROPOUT_RATE),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RakiNetwork {
        config: *config,
        layers,
        scale: 1.0,
    })
}

impl RakiNetwork {
    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    fn check_input(&self, batch: &[Tensor3]) -> Result<()> {
        let first = batch.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        if first.channels != self.config.in_channels {
            return Err(shape_err(format!(
                "input has {} channels, network expects {}",
                first.channels, self.config.in_channels
            )));
        }
        for t in batch {
            t.check_same_shape(first)?;
        }
        Ok(())
    }

    fn forward_cached(
        &mut self,
        batch: &[Tensor3],
        mode: Mode,
        rng: &mut Rng,
        exec: Exec,
        keep: bool,
    ) -> Result<(Vec<Tensor3>, Vec<LayerCache>)> {
        self.check_input(batch)?;
        let mut x: Vec<Tensor3> = batch.to_vec();
        let mut caches = Vec::new();
        for layer in self.layers.iter_mut() {
            let w = &layer.weights;
            let mut z = exec
                .map(&x, |_, t| conv2d_forward(t, w))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let mut bn_cache = None;
            if let Some(bn) = layer.batch_norm.as_mut() {
                let (y, c) = batchnorm_forward(&z, bn, mode)?;
                z = y;
                bn_cache = Some(c);
            }
            let mut masks = Vec::new();
            let pre_relu = if layer.relu {
                let pre = std::mem::take(&mut z);
                z = pre.iter().map(relu_forward).collect();
                pre
            } else {
                Vec::new()
            };
            if let Some(rate) = layer.dropout {
                for t in z.iter_mut() {
                    let (y, m) = dropout_forward(t, rate, rng, mode)?;
                    *t = y;
                    masks.push(m);
                }
            }
            let input = std::mem::replace(&mut x, z);
            if keep {
                caches.push(LayerCache {
                    input,
                    bn: bn_cache,
                    pre_relu,
                    masks,
                });
            }
        }
        Ok((x, caches))
    }

    /// Runs the network on a batch. Train mode samples dropout masks from
    /// `rng` and updates batch-norm running statistics.
    pub fn forward(&mut self, batch: &[Tensor3], mode: Mode, rng: &mut Rng) -> Result<Vec<Tensor3>> {
        Ok(self.forward_cached(batch, mode, rng, Exec::Sequential, false)?.0)
    }

    /// Inference without touching any state.
    pub fn infer(&self, input: &Tensor3) -> Result<Tensor3> {
        let mut net = self.clone();
        let mut rng = Rng::new(0);
        let mut out = net.forward_cached(std::slice::from_ref(input), Mode::Infer, &mut rng, Exec::Sequential, false)?;
        Ok(out.0.remove(0))
    }

    /// Forward in train mode followed by backpropagation of `grad_fn`'s
    /// output gradient. Returns the outputs, the loss reported by `grad_fn`
    /// and the parameter gradients.
    pub(crate) fn forward_backward<F>(
        &mut self,
        batch: &[Tensor3],
        rng: &mut Rng,
        exec: Exec,
        grad_fn: F,
    ) -> Result<(f64, Gradients)>
    where
        F: FnOnce(&[Tensor3]) -> Result<(f64, Vec<Tensor3>)>,
    {
        let (out, caches) = self.forward_cached(batch, Mode::Train, rng, exec, true)?;
        let (loss, mut g) = grad_fn(&out)?;
        let mut grads: Vec<Vec<f64>> = Vec::new();
        for (l, (layer, cache)) in self.layers.iter().zip(caches.iter()).enumerate().rev() {
            if layer.dropout.is_some() {
                g = g
                    .iter()
                    .zip(&cache.masks)
                    .map(|(t, m)| dropout_backward(t, m.as_ref()))
                    .collect::<Result<Vec<_>>>()?;
            }
            if layer.relu {
                g = g
                    .iter()
                    .zip(&cache.pre_relu)
                    .map(|(t, x)| relu_backward(x, t))
                    .collect::<Result<Vec<_>>>()?;
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (layer.batch_norm.as_ref(), cache.bn.as_ref()) {
                let (gi, dg, db) = batchnorm_backward(&g, bn, bc)?;
                g = gi;
                bn_grads = Some((dg, db));
            }
            let w = &layer.weights;
            let pairs: Vec<(&Tensor3, &Tensor3)> = cache.input.iter().zip(g.iter()).collect();
            let per_sample = exec.map(&pairs, |_, (x, go)| -> Result<(ConvWeights, Option<Tensor3>)> {
                let gw = conv2d_backward_weights(x, w, go)?;
                let gx = if l > 0 { Some(conv2d_backward_input(w, go)?) } else { None };
                Ok((gw, gx))
            });
            let mut gw_sum = vec![0.0; w.len()];
            let mut next = Vec::with_capacity(per_sample.len());
            for r in per_sample {
                let (gw, gx) = r?;
                gw_sum.iter_mut().zip(&gw.data).for_each(|(a, b)| *a += b);
                if let Some(gx) = gx {
                    next.push(gx);
                }
            }
            // blocks are collected back to front, reversed below
            if let Some((dg, db)) = bn_grads {
                grads.push(db);
                grads.push(dg);
            }
            grads.push(gw_sum);
            g = next;
        }
        grads.reverse();
        Ok((loss, Gradients(grads)))
    }

    /// Mutable views of every trainable block: per layer the convolution
    /// weights, then batch-norm γ and β when present.
    pub fn param_blocks(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = Vec::new();
        for layer in self.layers.iter_mut() {
            blocks.push(&mut layer.weights.data);
            if let Some(bn) = layer.batch_norm.as_mut() {
                blocks.push(&mut bn.gamma);
                blocks.push(&mut bn.beta);
            }
        }
        blocks
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for layer in &self.layers {
            sizes.push(layer.weights.len());
            if let Some(bn) = &layer.batch_norm {
                sizes.push(bn.gamma.len());
                sizes.push(bn.beta.len());
            }
        }
        sizes
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.data.iter().all(|v| v.is_finite())
                && l.batch_norm.as_ref().is_none_or(|b| {
                    b.gamma
                        .iter()
                        .chain(&b.beta)
                        .chain(&b.running_mean)
                        .chain(&b.running_var)
                        .all(|v| v.is_finite())
                })
        })
    }
}
