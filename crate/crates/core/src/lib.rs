//! Discrete flow matching engine for categorical graph generation.
//!
//! The crate builds generative models for small labeled graphs whose node and
//! edge attributes are categorical (with "no edge" as an explicit edge
//! category). Generation runs a continuous-time Markov chain from a
//! product-of-marginals reference distribution to the data distribution; the
//! jump rates are derived from a learned posterior over clean graphs.
//!
//! Main pieces, bottom up:
//!
//! - [`graph`]: the [`graph::Graph`] type, permutations, synthetic dataset
//!   generators, and JSON Lines dataset I/O.
//! - [`prior`]: product-of-categoricals reference distribution estimated from
//!   data.
//! - [`flow`]: per-dimension probability paths, jump-rate construction, and
//!   the Euler transition kernel, plus exhaustive-enumeration oracles.
//! - [`coupling`]: minibatch optimal-transport pairing of noise and data
//!   batches under a Hamming cost (exact assignment solver).
//! - [`tensor`]: a small reverse-mode automatic differentiation tape used by
//!   the network and the training loop.
//! - [`model`]: the edge-augmented graph transformer that predicts factorized
//!   posterior logits over clean node and edge categories.
//! - [`train`]: cross-entropy loss, gradient checking, the optimizer, and the
//!   training loop.
//! - [`sampler`]: Euler-discretized CTMC sampling and trajectory recording.
//! - [`guide`]: reward-guided fine-tuning with a policy-gradient objective
//!   and a KL penalty against the frozen pretrained model.
//! - [`metrics`]: degree/clustering/orbit MMD, validity checks, uniqueness
//!   and novelty, and exact total-variation oracles on enumerable spaces.
//! - [`cli`]: the `flowgraph` command-line entry point.

pub mod cli;
pub mod coupling;
pub mod error;
pub mod flow;
pub mod graph;
pub mod guide;
pub mod metrics;
pub mod model;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Permutation};
pub use prior::Prior;
