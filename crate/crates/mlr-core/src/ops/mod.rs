//! Layer forward/backward passes and the reconstruction loss.
//!
//! Every operation is a pure function: inputs are borrowed, outputs are fresh
//! tensors, and anything the backward pass needs is returned explicitly by
//! the forward pass. That keeps the finite-difference harness honest (it can
//! re-run forwards at will) and makes batch-level parallelism safe.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod loss;
pub mod pool;
pub mod upsample;

pub use activation::{gelu, gelu_backward, sigmoid, sigmoid_backward, Activation};
pub use batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, RunningStats};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_hw, ConvLayerSpec};
pub use loss::mse_loss;
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, ArgmaxMap};
pub use upsample::{upsample_to_backward, upsample_to_forward};
