use std::path::PathBuf;

use anyhow::{bail, Result};
use sae_branch::branch::{branch_histogram, fractions_csv, histogram_svg, partition_residual};
use sae_branch::feature_name;
use sae_branch::sae::load_checkpoint;
use sae_branch::store::LayerManifest;
use serde_json::json;

use crate::output::{file_stem, Outputs, RunConfig};
use crate::OutArgs;

/// Largest tolerated deviation of the per-feature squared-fraction sum from 1.
const PARTITION_TOLERANCE: f64 = 1e-6;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only this branch [default: every branch in the manifest].
    #[arg(long)]
    pub branch: Option<String>,
    /// Histogram bins over [0, 1].
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Top features listed per branch.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also write one SVG histogram per branch.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(args: &Args) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let manifest = LayerManifest::load(&args.manifest)?;
    if params.d() != manifest.d {
        bail!(
            "checkpoint d = {} but manifest {} has d = {}",
            params.d(),
            args.manifest.display(),
            manifest.d
        );
    }
    let slices = match &args.branch {
        Some(name) => match manifest.branch(name) {
            Some(b) => vec![b.clone()],
            None => bail!(
                "unknown branch {name:?}; available branches: {}",
                manifest.branch_names().join(", ")
            ),
        },
        None => manifest.branches.clone(),
    };

    let mut run = RunConfig::new("analyze", args.out.resolve())
        .input("checkpoint", &args.checkpoint)
        .input("manifest", &args.manifest);
    run.analysis.branch = args.branch.clone();
    run.analysis.bins = args.bins;
    run.analysis.top_n = args.top;
    let out = Outputs::create(run)?;

    let layer = &manifest.layer_name;
    let reports = slices
        .iter()
        .map(|s| branch_histogram(&params, layer, s, args.bins, args.top))
        .collect::<sae_branch::Result<Vec<_>>>()?;

    let live = params.l() - (0..params.l()).filter(|&j| params.is_zero_feature(j)).count();
    out.write(
        "fractions.csv",
        fractions_csv(&reports).as_bytes(),
        json!({ "layer_name": layer, "features": params.l(), "live_features": live }),
    )?;
    out.write_json(
        "histograms.json",
        &reports,
        json!({ "layer_name": layer, "bins": args.bins }),
    )?;
    if args.svg {
        for r in &reports {
            let name = format!("histogram_{}.svg", file_stem(&r.branch));
            let title = format!("{layer} {}: fraction of decoder norm", r.branch);
            out.write(
                &name,
                histogram_svg(&r.histogram, &title).as_bytes(),
                json!({ "branch": r.branch }),
            )?;
        }
    }

    println!("{layer}: {} features, {live} live", params.l());
    for r in &reports {
        println!("branch {} [{} bins]: {:?}", r.branch, args.bins, r.histogram.counts);
        for (j, f) in &r.top_features {
            println!("  {} {f:.4}", feature_name(layer, *j));
        }
    }
    if args.branch.is_none() && manifest.partition_violations().is_empty() {
        match partition_residual(&params, &manifest.branches)? {
            Some(r) => println!(
                "squared fractions sum to 1 within {r:.3e} over all branches ({})",
                if r <= PARTITION_TOLERANCE { "ok" } else { "FAILED" }
            ),
            None => println!("squared fraction check skipped: no live features"),
        }
    }
    Ok(())
}
