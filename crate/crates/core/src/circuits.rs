//! Weight-based circuit edges between the dictionaries of adjacent layers.
//!
//! For a source-layer direction `n1` and destination-layer direction `n2`
//! the edge weight is the bilinear form `n1 W n2^T`, where `W` is the
//! `d_src x d_dst` effective map between the two channel spaces (a source
//! activation `x` drives the destination as the row-vector product `x W`).
//!
//! `SAEWGT1` weight file (little-endian):
//!
//! ```text
//! magic   8 bytes  "SAEWGT1\0"
//! d_src   u32
//! d_dst   u32
//! matrix  d_src*d_dst f32, row-major
//! ```
//!
//! with an optional JSON sidecar `<file>.json` naming the two layers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_name;
use crate::linalg::{axpy, dot, first_non_finite, norm};
use crate::sae::SaeParams;
use crate::store::check_magic;

pub const WEIGHT_MAGIC: &[u8; 8] = b"SAEWGT1\0";
const HEADER_LEN: usize = 16;

/// Effective linear map between two layers' channel spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct InterLayerMap {
    pub source_layer: String,
    pub dest_layer: String,
    d_src: usize,
    d_dst: usize,
    matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSidecar {
    pub source_layer: String,
    pub dest_layer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl InterLayerMap {
    pub fn new(
        source_layer: impl Into<String>,
        dest_layer: impl Into<String>,
        d_src: usize,
        d_dst: usize,
        matrix: Vec<f64>,
    ) -> Result<Self> {
        if d_src == 0 || d_dst == 0 {
            return Err(Error::InvalidArgument("d_src and d_dst must be positive".into()));
        }
        if matrix.len() != d_src * d_dst {
            return Err(Error::dims(
                "inter-layer matrix (d_src*d_dst)",
                d_src * d_dst,
                matrix.len(),
            ));
        }
        if let Some(index) = first_non_finite(&matrix) {
            return Err(Error::NonFinite {
                what: "inter-layer matrix".into(),
                index,
            });
        }
        Ok(InterLayerMap {
            source_layer: source_layer.into(),
            dest_layer: dest_layer.into(),
            d_src,
            d_dst,
            matrix,
        })
    }

    pub fn identity(name: &str, d: usize) -> Self {
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        InterLayerMap::new(name, name, d, d, m).expect("identity is valid")
    }

    pub fn d_src(&self) -> usize {
        self.d_src
    }

    pub fn d_dst(&self) -> usize {
        self.d_dst
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.d_dst..(i + 1) * self.d_dst]
    }

    /// `W^T`, mapping the destination space back to the source space.
    pub fn transposed(&self) -> Self {
        InterLayerMap {
            source_layer: self.dest_layer.clone(),
            dest_layer: self.source_layer.clone(),
            d_src: self.d_dst,
            d_dst: self.d_src,
            matrix: crate::linalg::transpose(&self.matrix, self.d_src, self.d_dst),
        }
    }

    /// Destination activation driven by source activation `x`: `x W`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_src {
            return Err(Error::dims("source activation", self.d_src, x.len()));
        }
        let mut y = vec![0.0; self.d_dst];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut y);
        }
        Ok(y)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.matrix.len());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(self.d_src as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_dst as u32).to_le_bytes());
        for &v in &self.matrix {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path, source_layer: &str, dest_layer: &str) -> Result<Self> {
        check_magic(bytes, WEIGHT_MAGIC, path)?;
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let d_src = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d_dst = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = HEADER_LEN as u64 + 4 * d_src as u64 * d_dst as u64;
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
        let matrix = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        InterLayerMap::new(source_layer, dest_layer, d_src, d_dst, matrix)
    }

    /// Write the weight file plus its JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>, reduction: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = WeightSidecar {
            source_layer: self.source_layer.clone(),
            dest_layer: self.dest_layer.clone(),
            reduction: reduction.map(str::to_string),
        };
        let sp = sidecar_path(path);
        let text = serde_json::to_string_pretty(&side).expect("sidecar serializes") + "\n";
        fs::write(&sp, text).map_err(|e| Error::io(sp, e))
    }

    /// Read a weight file; layer names come from the sidecar when present,
    /// otherwise they default to `"src"` and `"dst"`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let sp = sidecar_path(path);
        let side = if sp.exists() {
            let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            serde_json::from_str(&text).map_err(|source| Error::Json { path: sp, source })?
        } else {
            WeightSidecar {
                source_layer: "src".into(),
                dest_layer: "dst".into(),
                reduction: None,
            }
        };
        Self::from_bytes(&bytes, path, &side.source_layer, &side.dest_layer)
    }
}

/// `n1 W n2^T`.
pub fn edge_weight(n1: &[f64], w: &InterLayerMap, n2: &[f64]) -> Result<f64> {
    if n1.len() != w.d_src {
        return Err(Error::dims("n1 (d_src)", w.d_src, n1.len()));
    }
    if n2.len() != w.d_dst {
        return Err(Error::dims("n2 (d_dst)", w.d_dst, n2.len()));
    }
    Ok(n1.iter().enumerate().map(|(i, &a)| a * dot(w.row(i), n2)).sum())
}

/// Change in the `n2` readout of the destination layer when the `n1`
/// component is removed from source activation `x`, computed with two forward
/// passes through the linear map. On a linear layer this equals
/// `(x . n1) * edge_weight(n1, W, n2)`.
pub fn ablation_oracle(w: &InterLayerMap, x: &[f64], n1: &[f64], n2: &[f64]) -> Result<f64> {
    if n1.len() != w.d_src {
        return Err(Error::dims("n1 (d_src)", w.d_src, n1.len()));
    }
    if n2.len() != w.d_dst {
        return Err(Error::dims("n2 (d_dst)", w.d_dst, n2.len()));
    }
    let nn = norm(n1);
    if (nn - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("n1 must be unit norm, got |n1| = {nn}")));
    }
    let clean = w.forward(x)?;
    let mut ablated_x = x.to_vec();
    axpy(-dot(x, n1), n1, &mut ablated_x);
    let ablated = w.forward(&ablated_x)?;
    Ok(dot(n2, &clean) - dot(n2, &ablated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircuitEdge {
    pub src_feature: usize,
    pub dst_feature: usize,
    pub weight: f64,
}

/// Heap entry where "greater" means a worse rank, so a max-heap evicts the
/// weakest kept edge.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked(CircuitEdge);

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .weight
            .abs()
            .total_cmp(&self.0.weight.abs())
            .then(self.0.src_feature.cmp(&other.0.src_feature))
            .then(self.0.dst_feature.cmp(&other.0.dst_feature))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn push_bounded(heap: &mut BinaryHeap<Ranked>, e: Ranked, m: usize) {
    if heap.len() < m {
        heap.push(e);
    } else if let Some(worst) = heap.peek() {
        if e < *worst {
            heap.pop();
            heap.push(e);
        }
    }
}

/// The `m` strongest edges (by |weight|) between all source and destination
/// decoder vectors, sorted by descending |weight|, ties by (src, dst).
pub fn top_edges(src: &SaeParams, w: &InterLayerMap, dst: &SaeParams, m: usize) -> Result<Vec<CircuitEdge>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    if src.d() != w.d_src || dst.d() != w.d_dst {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: source checkpoint d={}, weights {}x{}, destination checkpoint d={}",
            src.d(),
            w.d_src,
            w.d_dst,
            dst.d()
        )));
    }
    let heap = (0..src.l())
        .into_par_iter()
        .fold(BinaryHeap::new, |mut heap, s| {
            // row s of D_src W
            let projected = w.forward(src.decoder_row(s)).expect("checked dims");
            for t in 0..dst.l() {
                let e = CircuitEdge {
                    src_feature: s,
                    dst_feature: t,
                    weight: dot(&projected, dst.decoder_row(t)),
                };
                push_bounded(&mut heap, Ranked(e), m);
            }
            heap
        })
        .reduce(BinaryHeap::new, |mut a, b| {
            for e in b {
                push_bounded(&mut a, e, m);
            }
            a
        });
    Ok(heap.into_sorted_vec().into_iter().map(|r| r.0).collect())
}

/// `src_feature,dst_feature,weight` with layer/f/number names.
pub fn edges_csv(edges: &[CircuitEdge], source_layer: &str, dest_layer: &str) -> String {
    let mut out = String::from("src_feature,dst_feature,weight\n");
    for e in edges {
        writeln!(
            out,
            "{},{},{:.8e}",
            feature_name(source_layer, e.src_feature),
            feature_name(dest_layer, e.dst_feature),
            e.weight
        )
        .unwrap();
    }
    out
}
