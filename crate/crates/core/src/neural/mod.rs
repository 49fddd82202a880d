//! Dense networks with hand-written backpropagation, softmax cross-entropy,
//! Adam and DP-Adam.

mod activation;
mod checkpoint;
mod loss;
mod mlp;
mod optim;

pub use activation::{selu, selu_grad, SELU_ALPHA, SELU_LAMBDA};
pub use checkpoint::{decode_mlps, encode_mlps};
pub use loss::{softmax, softmax_cross_entropy};
pub use mlp::{Activation, BatchNorm, Dense, Mlp, MlpSpec, Tape};
pub use optim::{
    adam_step, clip_to_norm, dp_adam_step, l2_norm, per_sample_gradients, privatize_gradients,
    AdamConfig, AdamState, DpOptimizerConfig, DpStepInfo,
};

use crate::error::Result;

/// Anything whose trainable parameters can be viewed as one flat vector.
pub trait Parameterized {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Batch statistics couple samples, so per-sample clipping is undefined.
    fn uses_batch_norm(&self) -> bool {
        false
    }
}
