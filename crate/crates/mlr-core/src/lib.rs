//! Numeric core for unsupervised multimodal language representations.
//!
//! Everything needed to turn word-aligned multimodal feature sequences into
//! compact utterance embeddings lives here: a minimal dense-tensor engine with
//! hand-written forward/backward passes, the convolutional autoencoder built
//! on top of it, the normalization pipeline, logistic-regression downstream
//! heads and the evaluation metrics. All of it is plain `core` + `alloc`
//! arithmetic; file formats, configuration and the command-line harness live
//! in the companion `mlr-cli` crate.
//!
//! The crate is `no_std`-compatible (disable default features); the `std`
//! feature only enables runtime SIMD detection in the gemm kernel and error
//! trait impls, and `parallel` adds deterministic batch-level parallelism.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod cae;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod init;
pub mod logreg;
pub mod metrics;
pub mod ops;
pub mod optim;
mod par;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
