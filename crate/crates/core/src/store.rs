//! Activation shards, layer manifests and the shuffled batch stream.
//!
//! Shard layout (all little-endian):
//!
//! ```text
//! magic     8 bytes   "SAEACT1\0"
//! d         u32       vector width (channels)
//! count     u64       number of rows
//! rows      count*d   f32, row-major
//! image_ids count     u64
//! positions count     u32   flattened grid index inside the image's activation map
//! ```
//!
//! Nothing follows the payload. Non-finite floats are rejected on both write
//! and read.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::first_non_finite;

pub const SHARD_MAGIC: &[u8; 8] = b"SAEACT1\0";
pub const SHARD_HEADER_LEN: usize = 8 + 4 + 8;

/// Fixed-width rows of layer activation vectors with image/position provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    d: usize,
    rows: Vec<f32>,
    image_ids: Vec<u64>,
    position_ids: Vec<u32>,
}

impl ActivationShard {
    pub fn new(d: usize, rows: Vec<f32>, image_ids: Vec<u64>, position_ids: Vec<u32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("shard width d must be positive".into()));
        }
        let count = image_ids.len();
        if position_ids.len() != count {
            return Err(Error::dims("shard position_ids", count, position_ids.len()));
        }
        if rows.len() != count * d {
            return Err(Error::dims("shard rows (count*d)", count * d, rows.len()));
        }
        if let Some(index) = first_non_finite(&rows) {
            return Err(Error::NonFinite {
                what: "shard rows".into(),
                index,
            });
        }
        Ok(ActivationShard {
            d,
            rows,
            image_ids,
            position_ids,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn image_ids(&self) -> &[u64] {
        &self.image_ids
    }

    pub fn position_ids(&self) -> &[u32] {
        &self.position_ids
    }

    /// Serialize to the on-disk byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let count = self.count();
        let mut out = Vec::with_capacity(SHARD_HEADER_LEN + count * (self.d * 4 + 12));
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(count as u64).to_le_bytes());
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.image_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for p in &self.position_ids {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parse the on-disk layout. `path` is only used for error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (d, count) = parse_shard_header(bytes, path)?;
        let payload = payload_len(d, count).ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: u64::MAX,
            actual: bytes.len() as u64,
        })?;
        let expected = SHARD_HEADER_LEN as u64 + payload;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                actual,
            });
        }
        if actual > expected {
            return Err(Error::TrailingBytes {
                path: path.to_path_buf(),
                actual: actual - expected,
            });
        }
        let count = count as usize;
        let mut cursor = &bytes[SHARD_HEADER_LEN..];
        let rows: Vec<f32> = take_le(&mut cursor, count * d, f32::from_le_bytes);
        let image_ids: Vec<u64> = take_le(&mut cursor, count, u64::from_le_bytes);
        let position_ids: Vec<u32> = take_le(&mut cursor, count, u32::from_le_bytes);
        if let Some(index) = first_non_finite(&rows) {
            return Err(Error::NonFinite {
                what: format!("{} rows", path.display()),
                index,
            });
        }
        Ok(ActivationShard {
            d,
            rows,
            image_ids,
            position_ids,
        })
    }
}

/// Total file length of a shard with the given header, `None` on overflow.
pub fn shard_file_len(d: usize, count: u64) -> Option<u64> {
    payload_len(d, count)?.checked_add(SHARD_HEADER_LEN as u64)
}

fn payload_len(d: usize, count: u64) -> Option<u64> {
    let per_row = (d as u64).checked_mul(4)?.checked_add(8 + 4)?;
    per_row.checked_mul(count)
}

fn take_le<T, const N: usize>(cursor: &mut &[u8], n: usize, conv: fn([u8; N]) -> T) -> Vec<T> {
    let (head, rest) = cursor.split_at(n * N);
    *cursor = rest;
    head.chunks_exact(N)
        .map(|c| conv(c.try_into().expect("chunk width")))
        .collect()
}

fn parse_shard_header(bytes: &[u8], path: &Path) -> Result<(usize, u64)> {
    check_magic(bytes, SHARD_MAGIC, path)?;
    if bytes.len() < SHARD_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: SHARD_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if d == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}: shard width d must be positive",
            path.display()
        )));
    }
    Ok((d, count))
}

pub(crate) fn check_magic(bytes: &[u8], magic: &[u8], path: &Path) -> Result<()> {
    let head = &bytes[..bytes.len().min(magic.len())];
    if head != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(head).into_owned(),
        });
    }
    Ok(())
}

/// Write a shard. When `expected_d` is given (the manifest width) the shard
/// must match it.
pub fn write_shard(path: impl AsRef<Path>, shard: &ActivationShard, expected_d: Option<usize>) -> Result<()> {
    let path = path.as_ref();
    if let Some(d) = expected_d {
        if d != shard.d {
            return Err(Error::dims(
                format!("{} width vs manifest d", path.display()),
                d,
                shard.d,
            ));
        }
    }
    fs::write(path, shard.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<ActivationShard> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ActivationShard::from_bytes(&bytes, path)
}

/// Header-only probe: `(d, count)` plus a file-length consistency check.
pub fn read_shard_header(path: impl AsRef<Path>) -> Result<(usize, u64)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(SHARD_HEADER_LEN);
    file.by_ref()
        .take(SHARD_HEADER_LEN as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    parse_shard_header(&head, path)
}

/// One branch's channel range `[start, end)` in the concatenated layer output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSlice {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl BranchSlice {
    pub fn new(name: impl Into<String>, start: usize, end: usize) -> Self {
        BranchSlice {
            name: name.into(),
            start,
            end,
        }
    }

    pub fn width(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerManifest {
    pub layer_name: String,
    pub d: usize,
    pub model_tag: String,
    pub branches: Vec<BranchSlice>,
    pub shards: Vec<String>,
    /// Directory the shard names are relative to; set by [`LayerManifest::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl LayerManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: LayerManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn shard_paths(&self) -> Vec<PathBuf> {
        self.shards.iter().map(|s| self.base_dir.join(s)).collect()
    }

    pub fn branch(&self, name: &str) -> Option<&BranchSlice> {
        self.branches.iter().find(|b| b.name == name)
    }

    pub fn branch_names(&self) -> Vec<&str> {
        self.branches.iter().map(|b| b.name.as_str()).collect()
    }

    /// Violations of the slice-partition invariant, one message per problem.
    pub fn partition_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.d == 0 {
            out.push("d: must be positive".to_string());
        }
        if self.branches.is_empty() {
            out.push("branches: empty".to_string());
            return out;
        }
        let mut expected_start = 0;
        for (i, b) in self.branches.iter().enumerate() {
            if b.start >= b.end {
                out.push(format!(
                    "branches[{i}] ({}): start {} must be < end {}",
                    b.name, b.start, b.end
                ));
            }
            if b.end > self.d {
                out.push(format!(
                    "branches[{i}] ({}): end {} exceeds d {}",
                    b.name, b.end, self.d
                ));
            }
            if b.start < expected_start {
                out.push(format!(
                    "branches[{i}] ({}): overlaps previous slice (start {} < {})",
                    b.name, b.start, expected_start
                ));
            } else if b.start > expected_start {
                out.push(format!(
                    "branches[{i}] ({}): gap, channels {}..{} not covered",
                    b.name, expected_start, b.start
                ));
            }
            expected_start = expected_start.max(b.end);
        }
        if expected_start < self.d {
            out.push(format!("branches: channels {}..{} not covered", expected_start, self.d));
        }
        let mut names: Vec<&str> = self.branch_names();
        names.sort_unstable();
        for w in names.windows(2) {
            if w[0] == w[1] {
                out.push(format!("branches: duplicate name {:?}", w[0]));
            }
        }
        out
    }
}

/// Pick the `n` largest-norm activation vectors of one image's `p x d` grid.
///
/// Output is ordered by descending norm, ties by ascending position.
pub fn top_norm_sample(grid: &[f32], d: usize, n: usize) -> Result<Vec<(u32, Vec<f32>)>> {
    if d == 0 || !grid.len().is_multiple_of(d) {
        return Err(Error::dims("grid length (multiple of d)", d, grid.len()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count n must be >= 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = grid
        .chunks_exact(d)
        .enumerate()
        .map(|(i, row)| {
            let sq: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
            (sq.sqrt(), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(_, i)| (i as u32, grid[i * d..(i + 1) * d].to_vec()))
        .collect())
}

/// A batch of rows emitted by [`BatchStream`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub d: usize,
    pub rows: Vec<f32>,
    pub image_ids: Vec<u64>,
    pub position_ids: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone)]
enum ShardSource {
    Files(Vec<PathBuf>),
    Memory(Arc<[ActivationShard]>),
}

impl ShardSource {
    fn len(&self) -> usize {
        match self {
            ShardSource::Files(p) => p.len(),
            ShardSource::Memory(s) => s.len(),
        }
    }

    fn load(&self, i: usize) -> Result<Arc<ActivationShard>> {
        match self {
            ShardSource::Files(p) => read_shard(&p[i]).map(Arc::new),
            ShardSource::Memory(s) => Ok(Arc::new(s[i].clone())),
        }
    }
}

/// Seeded stream of batches over a list of shards.
///
/// Rows are read shard by shard and passed through a bounded shuffle buffer:
/// once the buffer is full, each incoming row replaces a uniformly chosen
/// buffered row, which is emitted. The tail of the buffer is drained in random
/// order. One pass emits every row exactly once; `buffer_size == 1` preserves
/// shard order.
#[derive(Debug)]
pub struct BatchStream {
    source: ShardSource,
    d: usize,
    batch_size: usize,
    buffer_size: usize,
    seed: u64,
    rng: ChaCha8Rng,
    next_shard: usize,
    current: Option<(Arc<ActivationShard>, usize)>,
    buf_rows: Vec<f32>,
    buf_images: Vec<u64>,
    buf_positions: Vec<u32>,
}

impl BatchStream {
    fn new(source: ShardSource, d: usize, batch_size: usize, seed: u64, buffer_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if buffer_size == 0 {
            return Err(Error::InvalidArgument("buffer_size must be >= 1".into()));
        }
        Ok(BatchStream {
            source,
            d,
            batch_size,
            buffer_size,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_shard: 0,
            current: None,
            buf_rows: Vec::with_capacity(buffer_size.min(1 << 20) * d),
            buf_images: Vec::new(),
            buf_positions: Vec::new(),
        })
    }

    /// Stream over shards held in memory (e.g. generated synthetic data).
    pub fn from_shards(
        shards: Arc<[ActivationShard]>,
        d: usize,
        batch_size: usize,
        seed: u64,
        buffer_size: usize,
    ) -> Result<Self> {
        if let Some(s) = shards.iter().find(|s| s.d() != d) {
            return Err(Error::dims("in-memory shard width", d, s.d()));
        }
        Self::new(ShardSource::Memory(shards), d, batch_size, seed, buffer_size)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Start a fresh pass with a new seed.
    pub fn restart(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.next_shard = 0;
        self.current = None;
        self.buf_rows.clear();
        self.buf_images.clear();
        self.buf_positions.clear();
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn next_source_row(&mut self) -> Result<Option<(Arc<ActivationShard>, usize)>> {
        loop {
            if let Some((shard, idx)) = &mut self.current {
                if *idx < shard.count() {
                    let out = (Arc::clone(shard), *idx);
                    *idx += 1;
                    return Ok(Some(out));
                }
                self.current = None;
            }
            if self.next_shard >= self.source.len() {
                return Ok(None);
            }
            let shard = self.source.load(self.next_shard)?;
            if shard.d() != self.d {
                let what = match &self.source {
                    ShardSource::Files(p) => format!("{} width vs manifest d", p[self.next_shard].display()),
                    ShardSource::Memory(_) => "in-memory shard width".to_string(),
                };
                return Err(Error::dims(what, self.d, shard.d()));
            }
            self.next_shard += 1;
            self.current = Some((shard, 0));
        }
    }

    fn buffered(&self) -> usize {
        self.buf_images.len()
    }

    fn next_row(&mut self, out: &mut Batch) -> Result<bool> {
        let d = self.d;
        while self.buffered() < self.buffer_size {
            match self.next_source_row()? {
                Some((shard, i)) => {
                    self.buf_rows.extend_from_slice(shard.row(i));
                    self.buf_images.push(shard.image_ids()[i]);
                    self.buf_positions.push(shard.position_ids()[i]);
                }
                None => break,
            }
        }
        let n = self.buffered();
        if n == 0 {
            return Ok(false);
        }
        let j = if n == 1 { 0 } else { self.rng.random_range(0..n) };
        out.rows.extend_from_slice(&self.buf_rows[j * d..(j + 1) * d]);
        out.image_ids.push(self.buf_images[j]);
        out.position_ids.push(self.buf_positions[j]);
        match self.next_source_row()? {
            Some((shard, i)) => {
                self.buf_rows[j * d..(j + 1) * d].copy_from_slice(shard.row(i));
                self.buf_images[j] = shard.image_ids()[i];
                self.buf_positions[j] = shard.position_ids()[i];
            }
            None => {
                let last = n - 1;
                if j != last {
                    self.buf_rows.copy_within(last * d..n * d, j * d);
                }
                self.buf_rows.truncate(last * d);
                self.buf_images.swap_remove(j);
                self.buf_positions.swap_remove(j);
            }
        }
        Ok(true)
    }

    /// Next batch of up to `batch_size` rows, or `None` once the pass is done.
    pub fn next_batch(&mut self) -> Result<Option<Batch>> {
        let mut batch = Batch {
            d: self.d,
            rows: Vec::with_capacity(self.batch_size * self.d),
            image_ids: Vec::with_capacity(self.batch_size),
            position_ids: Vec::with_capacity(self.batch_size),
        };
        while batch.len() < self.batch_size {
            if !self.next_row(&mut batch)? {
                break;
            }
        }
        Ok(if batch.is_empty() { None } else { Some(batch) })
    }
}

impl Iterator for BatchStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().transpose()
    }
}

/// One pass over the manifest's shards in seeded shuffle-buffer order.
pub fn stream_batches(
    manifest: &LayerManifest,
    batch_size: usize,
    seed: u64,
    buffer_size: usize,
) -> Result<BatchStream> {
    BatchStream::new(
        ShardSource::Files(manifest.shard_paths()),
        manifest.d,
        batch_size,
        seed,
        buffer_size,
    )
}
