//! Numerical core for weakly-supervised keypoint discovery.
//!
//! The crate implements generalized global pooling (average / max / leaky
//! max) as a pooling-vector product with exact backward passes, a small
//! hand-backpropagated convolutional classifier, activation-strength filter
//! selection, attention mask-out with a replica network, greedy clustering
//! of binarized keypoint proposals, and the evaluation metrics (feature-map
//! entropy, greedy PCK) used to study them, all at desk scale on synthetic
//! planted-keypoint datasets.
//!
//! Everything here is pure computation over explicit inputs; IO, file
//! formats, and the experiment CLI live in the companion `lmpkit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod clustering;
pub mod error;
pub mod maskout;
pub mod metrics;
pub mod pooling;
pub mod selection;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{GradPair, Tensor};
