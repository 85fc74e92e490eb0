//! Minimal deterministic numerical engine for the k-space networks.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod fft;
pub mod loss;
pub mod tensor;

pub use activation::{dropout_backward, dropout_forward, relu_backward, relu_forward, DropoutMask};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState};
pub use conv::{conv2d_backward, conv2d_forward, ConvWeights};
pub use fft::{dft2_centered, fft2c, idft2_centered};
pub use loss::{l1_loss, l1_loss_batch};
pub use tensor::Tensor3;

use serde::{Deserialize, Serialize};

/// Whether stochastic and batch-statistic layers run in training or
/// inference behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}
