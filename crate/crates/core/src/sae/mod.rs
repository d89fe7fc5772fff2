//! TopK sparse autoencoder: `z = TopK(W_enc (x - b_dec) + b_enc)`,
//! `x' = W_dec z + b_dec`, trained on reconstruction MSE with Adam.

mod adam;
mod checkpoint;
mod grad;
mod params;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState, Moments};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use grad::{batch_loss, forward_backward, gradients, BatchPass, Gradients};
pub use params::{mse_loss, topk_indices, topk_select, SaeParams, SparseCode};
pub use train::{dead_latents, train, train_from, TrainConfig, TrainOutcome, TrainStats};
