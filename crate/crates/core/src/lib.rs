//! Personalized voice activity detection with self-supervised pretraining.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`features`]: 40-dim log-mel frontend (25 ms frames, 10 ms shift).
//! * [`nn`]: LSTM stacks with BPTT, linear/conv1d layers, losses, Adam and
//!   cosine annealing.
//! * [`apc`]: autoregressive predictive coding pretraining of the VAD
//!   encoder, including the denoising variant.
//! * [`speaker`]: frozen d-vector embedder, enrollment and cosine scoring.
//! * [`pvad`]: the three-class personalized VAD model, training and inference.
//! * [`data`]: synthetic corpus, multi-speaker concatenation, multistyle
//!   augmentation and the noisy test matrix.
//! * [`eval`]: average precision, mAP and seed-wise confidence intervals.
//! * [`container`]: the `PVTC1` checkpoint format.
//! * [`config`] and [`experiment`]: run configuration and the end-to-end
//!   prepare / pretrain / fine-tune / evaluate driver.
//! * [`par`]: rayon data parallelism, switchable at runtime and compiled out
//!   without the `parallel` feature.

pub mod apc;
pub mod audio;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod nn;
pub mod par;
pub mod pvad;
pub mod rng;
pub mod trainer;
pub mod speaker;

pub use error::{Error, Result};
