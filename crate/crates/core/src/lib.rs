//! TopK sparse autoencoders trained on stored CNN activation vectors, plus the
//! analyses used to study branch specialization in concatenated-branch layers:
//!
//! - [`store`]: bit-exact activation shards, layer manifests and a seeded
//!   shuffle-buffer batch stream.
//! - [`sae`]: the TopK autoencoder itself (forward pass, analytic gradients,
//!   Adam, training loop, dead-latent tracking, checkpoints).
//! - [`branch`]: fraction of each decoder vector's norm living in a branch slice.
//! - [`circuits`]: bilinear edge weights between dictionaries of adjacent layers.
//! - [`embedding`]: deterministic 2D neighbor embedding of decoder vectors.
//! - [`toy`]: synthetic superposition data with a known dictionary.
//! - [`exemplars`]: per-image feature activations bucketed by activation level.

pub mod branch;
pub mod circuits;
pub mod embedding;
pub mod error;
pub mod exemplars;
pub mod linalg;
pub mod sae;
pub mod store;
pub mod toy;

pub use error::{Error, Result};

/// Report name of a learned feature: `layer/f/number`.
pub fn feature_name(layer: &str, index: usize) -> String {
    format!("{layer}/f/{index}")
}

/// Report name of a raw channel: `layer/n/number`.
pub fn neuron_name(layer: &str, index: usize) -> String {
    format!("{layer}/n/{index}")
}
