use std::path::PathBuf;

use anyhow::Result;
use sae_branch::circuits::{edges_csv, top_edges, InterLayerMap};
use sae_branch::sae::load_checkpoint;
use serde_json::json;

use crate::output::{Outputs, RunConfig};
use crate::OutArgs;

#[derive(clap::Args)]
pub struct Args {
    /// Checkpoint of the source layer SAE.
    #[arg(long)]
    pub src: PathBuf,
    /// Checkpoint of the destination layer SAE.
    #[arg(long)]
    pub dst: PathBuf,
    /// Inter-layer weight file (`d_src x d_dst`).
    #[arg(long)]
    pub weights: PathBuf,
    /// Number of strongest edges to keep.
    #[arg(long, default_value_t = 100, conflicts_with = "all")]
    pub top: usize,
    /// Keep every edge.
    #[arg(long)]
    pub all: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn run(args: &Args) -> Result<()> {
    let src = load_checkpoint(&args.src)?;
    let dst = load_checkpoint(&args.dst)?;
    let w = InterLayerMap::load(&args.weights)?;
    let m = if args.all { src.l() * dst.l() } else { args.top };

    let mut run = RunConfig::new("circuits", args.out.resolve())
        .input("src", &args.src)
        .input("dst", &args.dst)
        .input("weights", &args.weights);
    run.circuits.top_m = (!args.all).then_some(args.top);
    let out = Outputs::create(run)?;

    let edges = top_edges(&src, &w, &dst, m)?;
    let csv = edges_csv(&edges, &w.source_layer, &w.dest_layer);
    out.write(
        "edges.csv",
        csv.as_bytes(),
        json!({ "source_layer": w.source_layer, "dest_layer": w.dest_layer, "edges": edges.len() }),
    )?;
    println!("{} edges from {} to {}", edges.len(), w.source_layer, w.dest_layer);
    for line in csv.lines().skip(1).take(10) {
        println!("  {line}");
    }
    Ok(())
}
