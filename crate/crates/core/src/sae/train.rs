use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Batch, BatchStream};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::grad::forward_backward;
use super::params::SaeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub expansion_factor: usize,
    pub tied: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Examples without a selection before a latent counts as dead.
    pub dead_window: u64,
    /// Record a [`TrainStats`] every this many steps (plus first and last).
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 32,
            expansion_factor: 16,
            tied: true,
            learning_rate: 1e-3,
            batch_size: 256,
            steps: 1000,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            dead_window: 100_000,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.k == 0 || self.expansion_factor == 0 || self.batch_size == 0 {
            return bad("k, expansion_factor and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0) {
            return bad("learning_rate and adam_epsilon must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if self.dead_window == 0 || self.log_interval == 0 {
            return bad("dead_window and log_interval must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Snapshot of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub step: u64,
    pub examples_seen: u64,
    /// Batch MSE at this step, before the update.
    pub mse: f64,
    pub dead_count: usize,
    pub dead_fraction: f64,
    /// Per latent: the example count at which it was last selected, 0 if never.
    pub selections: Vec<u64>,
}

/// Latents not selected within the most recent `dead_window` examples.
pub fn dead_latents(stats: &TrainStats, dead_window: u64) -> Vec<usize> {
    dead_indices(&stats.selections, stats.examples_seen, dead_window)
}

fn dead_indices(last_selected: &[u64], seen: u64, window: u64) -> Vec<usize> {
    last_selected
        .iter()
        .enumerate()
        .filter(|(_, &last)| seen - last >= window)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SaeParams,
    pub history: Vec<TrainStats>,
}

impl TrainOutcome {
    pub fn final_stats(&self) -> Option<&TrainStats> {
        self.history.last()
    }
}

fn epoch_seed(base: u64, epoch: u64) -> u64 {
    base ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn to_f64(batch: &Batch) -> Vec<f64> {
    batch.rows.iter().map(|&v| f64::from(v)).collect()
}

/// Element-wise mean of the rows of a batch.
fn row_mean(rows: &[f64], d: usize) -> Vec<f64> {
    let n = (rows.len() / d) as f64;
    let mut mean = vec![0.0; d];
    for x in rows.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Train a TopK SAE for `config.steps` batches from `stream`, restarting the
/// stream with a derived seed whenever a pass ends.
///
/// `b_dec` starts at the mean of the first batch.
pub fn train(stream: &mut BatchStream, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let d = stream.d();
    let mut params = SaeParams::init(d, config.expansion_factor, config.k, config.tied, config.seed)?;
    train_from(&mut params, stream, config).map(|history| TrainOutcome { params, history })
}

/// Continue training existing parameters. Returns the recorded stats.
pub fn train_from(params: &mut SaeParams, stream: &mut BatchStream, config: &TrainConfig) -> Result<Vec<TrainStats>> {
    config.validate()?;
    if stream.d() != params.d() {
        return Err(Error::dims("stream width vs model d", params.d(), stream.d()));
    }
    let d = params.d();
    let l = params.l();
    let adam = config.adam();
    let mut state = AdamState::new(params);
    let mut history = Vec::new();
    let mut last_selected = vec![0u64; l];
    let mut seen: u64 = 0;
    let base_seed = stream.seed();
    let mut epoch = 0u64;

    for step in 1..=config.steps {
        let batch = match stream.next_batch()? {
            Some(b) => b,
            None => {
                epoch += 1;
                stream.restart(epoch_seed(base_seed, epoch));
                stream
                    .next_batch()?
                    .ok_or_else(|| Error::InvalidArgument("training stream holds no rows".into()))?
            }
        };
        let rows = to_f64(&batch);
        if step == 1 && seen == 0 {
            params.dec_bias.copy_from_slice(&row_mean(&rows, d));
        }
        let pass = forward_backward(params, &rows)?;
        if !pass.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: pass.loss });
        }
        for code in &pass.codes {
            seen += 1;
            for &j in &code.indices {
                last_selected[j] = seen;
            }
        }
        if step == 1 || step % config.log_interval == 0 || step == config.steps {
            let dead = dead_indices(&last_selected, seen, config.dead_window).len();
            history.push(TrainStats {
                step,
                examples_seen: seen,
                mse: pass.loss,
                dead_count: dead,
                dead_fraction: dead as f64 / l as f64,
                selections: last_selected.clone(),
            });
        }
        adam_step(params, &mut state, &pass.grads, &adam);
    }
    if !params.all_finite() {
        return Err(Error::NonFiniteLoss {
            step: config.steps,
            loss: f64::NAN,
        });
    }
    Ok(history)
}
