use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use sae_branch::sae::{checkpoint_bytes, parse_checkpoint, train, TrainConfig};
use sae_branch::store::{stream_batches, BatchStream, LayerManifest};
use sae_branch::toy::recovery_score;
use serde_json::json;

use crate::gen_toy::ToyArgs;
use crate::output::{Outputs, RunConfig};
use crate::OutArgs;

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("data").required(true).args(["manifest", "toy"])))]
pub struct Args {
    /// Train on this manifest's shards.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Train on the synthetic superposition task instead.
    #[arg(long)]
    pub toy: bool,
    #[command(flatten)]
    pub toy_args: ToyArgs,
    /// Latents kept per input.
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    /// Latent count as a multiple of the input width.
    #[arg(long, default_value_t = 16)]
    pub expansion: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Examples without selection before a latent counts as dead.
    #[arg(long, default_value_t = 100_000)]
    pub dead_window: u64,
    #[arg(long, default_value_t = 100)]
    pub log_interval: u64,
    /// Shuffle buffer size in rows.
    #[arg(long, default_value_t = 8192)]
    pub buffer: usize,
    /// Learn a separate decoder instead of tying it to the encoder.
    #[arg(long)]
    pub untied: bool,
    /// Output file stem.
    #[arg(long, default_value = "sae")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

impl Args {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            expansion_factor: self.expansion,
            tied: !self.untied,
            learning_rate: self.lr,
            batch_size: self.batch,
            steps: self.steps,
            seed: self.seed,
            dead_window: self.dead_window,
            log_interval: self.log_interval,
            ..TrainConfig::default()
        }
    }
}

pub fn run(args: &Args) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let mut run = RunConfig::new("train", args.out.resolve());
    run.train = config.clone();
    run.stream_buffer = args.buffer;

    let mut dict = None;
    let (mut stream, layer_name) = match &args.manifest {
        Some(path) => {
            run = run.input("manifest", path);
            let manifest = LayerManifest::load(path)?;
            (
                stream_batches(&manifest, args.batch, args.seed, args.buffer)?,
                manifest.layer_name,
            )
        }
        None => {
            let task = args.toy_args.task();
            run.toy = Some(task.clone());
            let (d, shards) = task.build()?;
            dict = Some(d);
            let stream = BatchStream::from_shards(Arc::from(shards), task.d, args.batch, args.seed, args.buffer)?;
            (stream, "toy".to_string())
        }
    };
    let out = Outputs::create(run)?;

    let outcome = train(&mut stream, &config).context("training failed")?;
    let bytes = checkpoint_bytes(&outcome.params);
    // analyses downstream see the f32 checkpoint, so score that
    let saved = parse_checkpoint(&bytes, &out.path("checkpoint"))?;
    let recovery = dict.as_ref().map(|d| recovery_score(&saved, d)).transpose()?;

    let history: Vec<_> = outcome
        .history
        .iter()
        .map(|s| json!({ "step": s.step, "examples_seen": s.examples_seen, "mse": s.mse, "dead_count": s.dead_count, "dead_fraction": s.dead_fraction }))
        .collect();
    let ckpt_name = format!("{}.ckpt", args.name);
    out.write(
        &ckpt_name,
        &bytes,
        json!({
            "layer_name": layer_name,
            "d": saved.d(),
            "l": saved.l(),
            "k": saved.k(),
            "tied": saved.tied(),
            "recovery_score": recovery,
            "final_stats": outcome.final_stats(),
            "history": history,
        }),
    )?;

    println!("checkpoint: {}", out.path(&ckpt_name).display());
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.final_stats()) {
        println!("steps: {}  examples: {}", last.step, last.examples_seen);
        println!(
            "mse: {:.6} -> {:.6} ({:.4} of initial)",
            first.mse,
            last.mse,
            last.mse / first.mse
        );
        println!(
            "dead latents: {} of {} ({:.4})",
            last.dead_count,
            saved.l(),
            last.dead_fraction
        );
    }
    if let Some(r) = recovery {
        println!("recovery score: {r:.4}");
    }
    Ok(())
}
