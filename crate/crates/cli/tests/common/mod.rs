//! Runs the built binary and writes small on-disk fixtures.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sae_branch::sae::{save_checkpoint, SaeParams};
use sae_branch::store::{write_shard, ActivationShard, BranchSlice, LayerManifest};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout:\n{}\nstderr:\n{}", self.stdout, self.stderr);
        self
    }
}

pub fn command(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sae-branch"));
    c.args(args).env_remove("SAE_BRANCH_OUT_DIR");
    c
}

pub fn run_command(mut c: Command) -> Output {
    let out = c.output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn sae_branch(args: &[&str]) -> Output {
    run_command(command(args))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `rows` random vectors, numbered as `rows / 4` images of 4 positions,
/// packed into shards of at most `per_shard` rows.
pub fn random_shards(seed: u64, d: usize, rows: usize, per_shard: usize) -> Vec<ActivationShard> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<f32> = (0..rows * d).map(|_| r.random_range(-1.0f32..1.0)).collect();
    (0..rows)
        .step_by(per_shard)
        .map(|start| {
            let end = (start + per_shard).min(rows);
            ActivationShard::new(
                d,
                all[start * d..end * d].to_vec(),
                (start..end).map(|i| (i / 4) as u64).collect(),
                (start..end).map(|i| (i % 4) as u32).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Write shards plus a manifest into `dir`; returns the manifest path.
pub fn write_layer(
    dir: &Path,
    layer: &str,
    d: usize,
    branches: &[(&str, usize, usize)],
    shards: &[ActivationShard],
) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut names = Vec::new();
    for (i, shard) in shards.iter().enumerate() {
        let name = format!("{layer}_{i}.bin");
        write_shard(dir.join(&name), shard, None).unwrap();
        names.push(name);
    }
    let manifest = LayerManifest {
        layer_name: layer.to_string(),
        d,
        model_tag: "fixture".to_string(),
        branches: branches.iter().map(|&(n, a, b)| BranchSlice::new(n, a, b)).collect(),
        shards: names,
        base_dir: PathBuf::new(),
    };
    let path = dir.join(format!("{layer}.json"));
    manifest.save(&path).unwrap();
    path
}

/// Tied checkpoint whose values are all exactly representable in f32.
pub fn random_checkpoint(seed: u64, d: usize, l: usize, k: usize) -> SaeParams {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |n: usize, scale: f32| -> Vec<f64> { (0..n).map(|_| f64::from(r.random_range(-scale..scale))).collect() };
    let enc = draw(l * d, 1.0);
    let enc_bias = draw(l, 0.1);
    let dec_bias = draw(d, 0.1);
    SaeParams::from_parts(d, l, k, enc, enc_bias, dec_bias, None).unwrap()
}

pub fn write_checkpoint(path: &Path, params: &SaeParams) -> PathBuf {
    save_checkpoint(path, params).unwrap();
    path.to_path_buf()
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}
