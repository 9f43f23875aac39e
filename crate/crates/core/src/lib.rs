//! Local explanation methods for small feedforward networks and the
//! parameter-randomization checks used to test whether those explanations
//! depend on the learned weights at all.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs and seeds; file formats, dataset files, the
//! parallel experiment runner and the CLI live in `sanity-harness`.
//!
//! Layout:
//!
//! - [`tensor`]: dense row-major `f64` arrays and the kernels built on them.
//! - [`nn`]: layer specs, networks, forward and reverse-mode backward passes.
//! - [`train`]: weight initialization and mini-batch SGD.
//! - [`attribution`]: gradient, integrated gradients, guided backprop,
//!   Grad-CAM / guided Grad-CAM, SmoothGrad and VarGrad.
//! - [`randomize`]: cascading and independent layer re-initialization.
//! - [`metrics`]: Spearman rank correlation and per-stage summaries.
//! - [`data`]: in-memory datasets, the synthetic pattern set, test beds.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attribution;
pub mod data;
mod error;
pub mod exec;
pub mod metrics;
pub mod nn;
pub mod randomize;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
