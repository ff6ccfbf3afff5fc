//! Desk-scale simulator for decentralized deep learning over mesh networks.
//!
//! A set of agents holds private data shards and trains copies of one model
//! by diffusion: each round every agent takes local gradient steps (adapt)
//! and then averages parameters with its neighbors (combine). Two combine
//! rules are provided. The classical rule reuses one static mixing matrix
//! for every layer. The deep-relative-trust rule rebuilds a per-layer mixing
//! tensor at each consensus step from the current parameters, so agents
//! whose layers disagree strongly are trusted less on those layers.
//!
//! Modules:
//! - [`topology`]: undirected mesh graphs and static Metropolis weights.
//! - [`nn`]: layered feed-forward nets, softmax loss, analytic gradients.
//! - [`mixing`]: trust-based mixing tensors and relative-distance bounds.
//! - [`data`]: synthetic Gaussian-blob classification and data partitions.
//! - [`strategies`]: adapt and combine steps, full training rounds.
//! - [`diagnostics`]: limiting-distribution estimates, disagreement, drift.
//! - [`cli`]: experiment configs, metrics output, the command-line surface.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod mixing;
pub mod nn;
pub mod rng;
pub mod strategies;
pub mod topology;

pub use error::{Error, Result};
