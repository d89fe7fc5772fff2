use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use sae_branch::store::{read_shard_header, shard_file_len, LayerManifest};

#[derive(clap::Args)]
pub struct Args {
    /// Layer manifest JSON.
    pub manifest: PathBuf,
}

/// Every problem found in the manifest and its shards, each prefixed with
/// the offending file.
pub fn diagnostics(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let shown = path.display();
    let mut manifest: LayerManifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => return Ok(vec![format!("{shown}: schema: {e}")]),
    };
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut out: Vec<String> = manifest
        .partition_violations()
        .into_iter()
        .map(|v| format!("{shown}: {v}"))
        .collect();
    if manifest.shards.is_empty() {
        out.push(format!("{shown}: shards: empty"));
    }
    for (i, shard) in manifest.shard_paths().iter().enumerate() {
        let name = shard.display();
        let (d, count) = match read_shard_header(shard) {
            Ok(h) => h,
            Err(e) => {
                out.push(format!("{name}: shards[{i}] header: {e}"));
                continue;
            }
        };
        if d != manifest.d {
            out.push(format!(
                "{name}: shards[{i}] d: header says {d}, manifest says {}",
                manifest.d
            ));
        }
        let actual = fs::metadata(shard).map(|m| m.len()).unwrap_or(0);
        match shard_file_len(d, count) {
            Some(expected) if expected == actual => {}
            Some(expected) => out.push(format!(
                "{name}: shards[{i}] length: {count} rows of width {d} need {expected} bytes, file has {actual}"
            )),
            None => out.push(format!(
                "{name}: shards[{i}] count: {count} rows overflow the file size"
            )),
        }
    }
    Ok(out)
}

pub fn run(args: &Args) -> Result<ExitCode> {
    let diags = diagnostics(&args.manifest)?;
    for d in &diags {
        println!("{d}");
    }
    if diags.is_empty() {
        println!("{}: ok", args.manifest.display());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{} violation(s)", diags.len());
        Ok(ExitCode::from(1))
    }
}
