use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sae_branch::embedding::EmbedConfig;
use sae_branch::sae::TrainConfig;
use sae_branch::toy::ToyTask;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisConfig {
    pub branch: Option<String>,
    pub bins: usize,
    pub top_n: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            branch: None,
            bins: 20,
            top_n: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CircuitsConfig {
    /// `None` lists every edge.
    pub top_m: Option<usize>,
}

impl Default for CircuitsConfig {
    fn default() -> Self {
        CircuitsConfig { top_m: Some(100) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterConfig {
    pub branch: Option<String>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExamplesConfig {
    pub feature: Option<usize>,
    pub buckets: usize,
    pub per_bucket: usize,
    pub seed: u64,
}

impl Default for ExamplesConfig {
    fn default() -> Self {
        ExamplesConfig {
            feature: None,
            buckets: 5,
            per_bucket: 4,
            seed: 0,
        }
    }
}

/// Everything that determines a command's outputs. Written verbatim into
/// every output's sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub train: TrainConfig,
    pub stream_buffer: usize,
    pub toy: Option<ToyTask>,
    pub analysis: AnalysisConfig,
    pub circuits: CircuitsConfig,
    pub embed: EmbedConfig,
    pub embed_filter: FilterConfig,
    pub examples: ExamplesConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(subcommand: &str, output_dir: PathBuf) -> Self {
        RunConfig {
            subcommand: subcommand.to_string(),
            train: TrainConfig::default(),
            stream_buffer: 8192,
            toy: None,
            analysis: AnalysisConfig::default(),
            circuits: CircuitsConfig::default(),
            embed: EmbedConfig::default(),
            embed_filter: FilterConfig {
                branch: None,
                threshold: None,
            },
            examples: ExamplesConfig::default(),
            inputs: BTreeMap::new(),
            output_dir,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }
}

/// Writes output files into one directory, each with a `<file>.run.json`
/// sidecar holding the run config and per-file metadata.
pub struct Outputs {
    run: RunConfig,
}

impl Outputs {
    pub fn create(run: RunConfig) -> Result<Self> {
        fs::create_dir_all(&run.output_dir)
            .with_context(|| format!("creating output directory {}", run.output_dir.display()))?;
        Ok(Outputs { run })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run.output_dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8], meta: Value) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.sidecar(name, meta)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T, meta: Value) -> Result<PathBuf> {
        self.write(name, &to_json_bytes(value)?, meta)
    }

    /// Sidecar for a file written by other code.
    pub fn sidecar(&self, name: &str, meta: Value) -> Result<()> {
        let side = self.path(&format!("{name}.run.json"));
        let body = json!({
            "file": name,
            "run_config": self.run,
            "meta": meta,
        });
        fs::write(&side, to_json_bytes(&body)?).with_context(|| format!("writing {}", side.display()))
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// File-name-safe form of a branch or layer name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Layer name recorded in a checkpoint's sidecar, if there is one.
pub fn checkpoint_layer(ckpt: &Path) -> Option<String> {
    let mut side = ckpt.as_os_str().to_owned();
    side.push(".run.json");
    let text = fs::read_to_string(PathBuf::from(side)).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v["meta"]["layer_name"].as_str().map(str::to_string)
}
