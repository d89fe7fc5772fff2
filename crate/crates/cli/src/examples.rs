use std::path::PathBuf;

use anyhow::{bail, Result};
use sae_branch::exemplars::{bucket_sample, exemplars_csv, feature_activations_from_manifest, Bucket};
use sae_branch::feature_name;
use sae_branch::sae::load_checkpoint;
use sae_branch::store::LayerManifest;
use serde::Serialize;
use serde_json::json;

use crate::output::{Outputs, RunConfig};
use crate::OutArgs;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of the dataset to search.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature index.
    #[arg(long)]
    pub feature: usize,
    /// Number of equal-percentile activation levels.
    #[arg(long, default_value_t = 5)]
    pub buckets: usize,
    /// Images sampled per level.
    #[arg(long, default_value_t = 4)]
    pub per_bucket: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct Report<'a> {
    feature: String,
    feature_id: usize,
    images: usize,
    /// Images where the feature fires at all.
    active_images: usize,
    max_activation: f64,
    buckets: &'a [Bucket],
}

pub fn run(args: &Args) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let manifest = LayerManifest::load(&args.manifest)?;
    if params.d() != manifest.d {
        bail!("checkpoint d = {} but manifest d = {}", params.d(), manifest.d);
    }
    let mut run = RunConfig::new("examples", args.out.resolve())
        .input("checkpoint", &args.checkpoint)
        .input("manifest", &args.manifest);
    run.examples.feature = Some(args.feature);
    run.examples.buckets = args.buckets;
    run.examples.per_bucket = args.per_bucket;
    run.examples.seed = args.seed;

    let acts = feature_activations_from_manifest(&params, &manifest, args.feature)?;
    let report = bucket_sample(args.feature, &acts, args.buckets, args.per_bucket, args.seed)?;
    let name = feature_name(&manifest.layer_name, args.feature);
    let active = acts.iter().filter(|a| a.activation > 0.0).count();
    let summary = Report {
        feature: name.clone(),
        feature_id: args.feature,
        images: acts.len(),
        active_images: active,
        max_activation: acts.iter().map(|a| a.activation).fold(0.0, f64::max),
        buckets: &report.buckets,
    };

    let out = Outputs::create(run)?;
    let meta = json!({ "feature": name, "images": acts.len(), "active_images": active });
    out.write_json("examples.json", &summary, meta.clone())?;
    out.write(
        "examples.csv",
        exemplars_csv(&report, &manifest.layer_name).as_bytes(),
        meta,
    )?;

    println!("{name}: active on {active} of {} images", acts.len());
    for b in &report.buckets {
        let range = b
            .activation_range
            .map_or_else(|| "-".to_string(), |(lo, hi)| format!("{lo:.4}..{hi:.4}"));
        println!(
            "  ({:.0}%, {:.0}%]: {} images, activation {range}, {} sampled",
            b.percentile_lo,
            b.percentile_hi,
            b.members,
            b.samples.len()
        );
    }
    Ok(())
}
