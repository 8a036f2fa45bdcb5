//! Sparse variational autoencoder for graphs.
//!
//! Each node gets an embedding `z = b ⊙ r` where `b` is a binary community
//! membership vector under a stick-breaking prior and `r` a Gaussian
//! strength vector. A graph convolutional encoder produces the variational
//! parameters, a decoder turns embeddings into link probabilities, and the
//! whole model is trained by stochastic gradient variational Bayes.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense/sparse matrices, reverse-mode tape, Adam.
//! - [`graph`]: loading, normalization, link splits, synthetic graphs.
//! - [`stochastic`]: reparameterized samplers and KL terms.
//! - [`model`]: encoder, decoders and model variants.
//! - [`trainer`]: the loss, training loop, scoring and checkpoints.
//! - [`metrics`]: AUC/AP and overlapping community extraction.
//! - [`cli`]: the `dglfrm` command-line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod special;
pub mod stochastic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/stochastic.md")]
    mod stochastic {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
