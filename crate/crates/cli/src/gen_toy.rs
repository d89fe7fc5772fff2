use anyhow::{bail, Context, Result};
use sae_branch::store::{write_shard, BranchSlice, LayerManifest};
use sae_branch::toy::ToyTask;
use serde_json::json;

use crate::output::{Outputs, RunConfig};
use crate::OutArgs;

/// Synthetic task flags, shared with `train --toy`.
#[derive(clap::Args, Clone)]
pub struct ToyArgs {
    /// Input width.
    #[arg(long, default_value_t = 32)]
    pub toy_d: usize,
    /// Number of ground-truth directions.
    #[arg(long, default_value_t = 48)]
    pub toy_m: usize,
    #[arg(long, default_value_t = 200_000)]
    pub toy_samples: usize,
    /// Maximum active directions per sample.
    #[arg(long, default_value_t = 3)]
    pub toy_s_max: usize,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    pub toy_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub toy_seed: u64,
    #[arg(long, default_value_t = 50_000)]
    pub toy_rows_per_shard: usize,
}

impl ToyArgs {
    pub fn task(&self) -> ToyTask {
        ToyTask {
            d: self.toy_d,
            m: self.toy_m,
            samples: self.toy_samples,
            s_max: self.toy_s_max,
            noise_sigma: self.toy_sigma,
            seed: self.toy_seed,
            rows_per_shard: self.toy_rows_per_shard,
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Branch partition as `name=width,...`; widths must sum to the input
    /// width [default: one branch "all"].
    #[arg(long)]
    pub branches: Option<String>,
    /// Layer name recorded in the manifest.
    #[arg(long, default_value = "toy")]
    pub layer: String,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn parse_branches(spec: &str, d: usize) -> Result<Vec<BranchSlice>> {
    let mut out = Vec::new();
    let mut start = 0;
    for part in spec.split(',') {
        let (name, width) = part
            .split_once('=')
            .with_context(|| format!("branch {part:?} is not name=width"))?;
        let width: usize = width
            .trim()
            .parse()
            .with_context(|| format!("branch {part:?}: bad width"))?;
        out.push(BranchSlice::new(name.trim(), start, start + width));
        start += width;
    }
    if start != d {
        bail!("branch widths sum to {start}, input width is {d}");
    }
    Ok(out)
}

pub fn run(args: &Args) -> Result<()> {
    let task = args.toy.task();
    let branches = match &args.branches {
        Some(s) => parse_branches(s, task.d)?,
        None => vec![BranchSlice::new("all", 0, task.d)],
    };
    let mut run = RunConfig::new("gen-toy", args.out.resolve());
    run.toy = Some(task.clone());
    let out = Outputs::create(run)?;

    let (dict, shards) = task.build()?;
    let mut names = Vec::with_capacity(shards.len());
    for (i, shard) in shards.iter().enumerate() {
        let name = format!("shard_{i:04}.bin");
        write_shard(out.path(&name), shard, Some(task.d))?;
        out.sidecar(&name, json!({ "rows": shard.count(), "d": shard.d() }))?;
        names.push(name);
    }
    let manifest = LayerManifest {
        layer_name: args.layer.clone(),
        d: task.d,
        model_tag: "toy-superposition".to_string(),
        branches,
        shards: names,
        base_dir: Default::default(),
    };
    manifest.save(out.path("manifest.json"))?;
    out.sidecar("manifest.json", json!({ "shards": shards.len() }))?;
    out.write_json("dictionary.json", &dict, json!({ "m": dict.m, "d": dict.d }))?;
    println!(
        "wrote {} samples in {} shards to {}",
        task.samples,
        shards.len(),
        out.path("manifest.json").display()
    );
    Ok(())
}
