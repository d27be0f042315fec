//! Bayesian BiLSTM classifiers for somatic variant calling on tumor/normal
//! pileup pair matrices.
//!
//! The crate is self-contained: a small reverse-mode differentiation tape
//! ([`grad`]), deterministic LSTM and dense layers ([`layers`]), mean-field
//! Gaussian variational layers with Flipout sampling ([`variational`]), Adam
//! ([`optim`]), a synthetic pileup simulator and dataset format ([`pileup`]),
//! Monte-Carlo prediction and uncertainty reports ([`metrics`]), and the
//! command pipeline behind the `bayescall` binary ([`commands`]).

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod grad;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod pileup;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod variational;

pub use error::{Error, Result};
pub use tensor::Tensor;
