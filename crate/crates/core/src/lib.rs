//! # dynback-core
//!
//! Pure-compute core for training image classifiers with an input-aware
//! dynamic backdoor and analysing them against standard defenses.
//!
//! The crate provides:
//! - [`tensor::Tensor`] — dense f32 tensors with a fast matmul kernel
//! - [`nn`] — layers (conv, batchnorm, pooling, linear, dropout), losses,
//!   and optimizers with hand-rolled backward passes
//! - [`models`] — the classifier architectures (small convnet, pre-activation
//!   ResNet-18) and the encoder-decoder trigger generators
//! - [`trigger`] — blend-mask trigger injection and mask-generator pretraining
//! - [`training`] — joint classifier/generator training with clean, attack,
//!   and cross-trigger modes plus the diversity regularizer
//! - [`evaluate`] — clean / attack / cross-trigger test accuracy
//! - [`defense`] — trigger reverse-engineering, perturbation entropy,
//!   channel pruning, input squeezing, and activation heatmaps
//! - [`badnets`] — the static-trigger poisoning baseline
//!
//! All computation is deterministic for a fixed seed: batching, mode
//! sampling, dropout, and initialization draw from named [`rng::SeededRng`]
//! streams, and every kernel runs single-threaded in a fixed order.
//!
//! The crate is no_std-compatible (`default-features = false`, alloc
//! required); file IO, config parsing, and the CLI live in the companion
//! `dynback-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod badnets;
pub mod dataset;
pub mod defense;
pub mod error;
pub mod evaluate;
pub mod math;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod trigger;

pub use error::{Error, Result};
pub use tensor::Tensor;
