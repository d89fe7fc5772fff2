use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use sae_branch::branch::branch_fraction;
use sae_branch::embedding::{coords_csv, embed, scatter_svg, EmbedConfig};
use sae_branch::feature_name;
use sae_branch::sae::load_checkpoint;
use sae_branch::store::LayerManifest;
use serde_json::json;

use crate::output::{checkpoint_layer, Outputs, RunConfig};
use crate::OutArgs;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest supplying branch slices and the layer name.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Keep only features with at least `--threshold` of their decoder norm
    /// in this branch.
    #[arg(long, requires = "manifest")]
    pub branch: Option<String>,
    #[arg(long, requires = "branch")]
    pub threshold: Option<f64>,
    /// Layer name for feature ids [default: from the manifest or the
    /// checkpoint's sidecar].
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 15)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    pub min_dist: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub negative_rate: usize,
    #[arg(long, default_value_t = 1.0)]
    pub learning_rate: f64,
    /// Neighborhood size of the trustworthiness score.
    #[arg(long, default_value_t = 10)]
    pub trust_k: usize,
    /// Also write a scatter plot, colored by branch fraction when a branch
    /// is given.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(args: &Args) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let manifest = args.manifest.as_ref().map(LayerManifest::load).transpose()?;
    let layer = args
        .layer
        .clone()
        .or_else(|| manifest.as_ref().map(|m| m.layer_name.clone()))
        .or_else(|| checkpoint_layer(&args.checkpoint))
        .unwrap_or_else(|| "layer".to_string());
    let slice = match (&args.branch, &manifest) {
        (Some(name), Some(m)) => {
            if m.d != params.d() {
                bail!("checkpoint d = {} but manifest d = {}", params.d(), m.d);
            }
            let s = m.branch(name).with_context(|| {
                format!(
                    "unknown branch {name:?}; available branches: {}",
                    m.branch_names().join(", ")
                )
            })?;
            Some(s.clone())
        }
        _ => None,
    };

    let config = EmbedConfig {
        neighbors: args.neighbors,
        min_dist: args.min_dist,
        epochs: args.epochs,
        seed: args.seed,
        negative_rate: args.negative_rate,
        learning_rate: args.learning_rate,
        trust_k: args.trust_k,
    };
    let mut run = RunConfig::new("embed", args.out.resolve()).input("checkpoint", &args.checkpoint);
    if let Some(m) = &args.manifest {
        run = run.input("manifest", m);
    }
    run.embed = config.clone();
    run.embed_filter.branch = args.branch.clone();
    run.embed_filter.threshold = args.threshold;

    // zero decoder vectors have no direction and are always skipped
    let mut kept = Vec::new();
    let mut fractions = Vec::new();
    for j in 0..params.l() {
        if params.is_zero_feature(j) {
            continue;
        }
        let f = match &slice {
            Some(s) => branch_fraction(params.decoder_row(j), s)?.unwrap_or(0.0),
            None => 0.0,
        };
        if args.threshold.is_some_and(|t| f < t) {
            continue;
        }
        kept.push(j);
        fractions.push(f);
    }
    if kept.is_empty() {
        bail!("no features left after filtering; lower --threshold or pick another branch");
    }
    let d = params.d();
    let vectors: Vec<f64> = kept
        .iter()
        .flat_map(|&j| params.decoder_row(j).iter().copied())
        .collect();
    let emb = embed(&vectors, d, &config)?;

    let out = Outputs::create(run)?;
    let names: Vec<String> = kept.iter().map(|&j| feature_name(&layer, j)).collect();
    out.write(
        "coords.csv",
        coords_csv(&names, &emb.coords).as_bytes(),
        json!({ "layer_name": layer, "features": kept.len(), "trustworthiness": emb.trustworthiness }),
    )?;
    if args.svg {
        let title = match &slice {
            Some(s) => format!("{layer} decoder vectors, colored by {} fraction", s.name),
            None => format!("{layer} decoder vectors"),
        };
        let colors = slice.as_ref().map(|_| fractions.as_slice());
        out.write(
            "embedding.svg",
            scatter_svg(&emb.coords, colors, &title).as_bytes(),
            json!({ "layer_name": layer, "features": kept.len() }),
        )?;
    }
    println!("embedded {} features of {layer}", kept.len());
    println!("trustworthiness (k={}): {:.4}", args.trust_k, emb.trustworthiness);
    Ok(())
}
