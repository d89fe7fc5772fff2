//! Deterministic 2D neighbor embedding of decoder vectors.
//!
//! Pipeline: exact cosine kNN graph, per-point fuzzy membership weights,
//! symmetrization, PCA initialization, then seeded attraction/repulsion
//! refinement. A trustworthiness score is attached as a quality check.

mod fuzzy;
mod knn;
mod layout;
mod trust;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use fuzzy::{
    bandwidth_target, directed_weights, fuzzy_weights, solve_bandwidth, symmetrize, Edge, FuzzyGraph, NeighborGraph,
    BANDWIDTH_TOLERANCE, BISECTION_ITERATIONS,
};
pub use knn::{knn_graph, knn_graph_with, KnnGraph, Metric};
pub use layout::{optimize_layout, pca_init, LayoutConfig, INIT_EXTENT};
pub use trust::trustworthiness;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub neighbors: usize,
    pub min_dist: f64,
    pub epochs: usize,
    pub seed: u64,
    pub negative_rate: usize,
    pub learning_rate: f64,
    /// Neighborhood size for the trustworthiness score.
    pub trust_k: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let l = LayoutConfig::default();
        EmbedConfig {
            neighbors: 15,
            min_dist: l.min_dist,
            epochs: l.epochs,
            seed: l.seed,
            negative_rate: l.negative_rate,
            learning_rate: l.learning_rate,
            trust_k: 10,
        }
    }
}

impl EmbedConfig {
    pub fn layout(&self) -> LayoutConfig {
        LayoutConfig {
            epochs: self.epochs,
            min_dist: self.min_dist,
            seed: self.seed,
            negative_rate: self.negative_rate,
            learning_rate: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    pub config: EmbedConfig,
    pub trustworthiness: f64,
}

/// Lay out `vectors` (`n x d`) over `graph`, starting from the PCA scores.
pub fn layout(vectors: &[f64], d: usize, graph: &NeighborGraph, config: &EmbedConfig) -> Result<Embedding2D> {
    let init = pca_init(vectors, d)?;
    let coords = optimize_layout(init, graph, &config.layout())?;
    let n = coords.len();
    let trust_k = config.trust_k.min(n.saturating_sub(2) * 2 / 3);
    let trustworthiness = if trust_k >= 1 {
        trustworthiness(vectors, d, &coords, trust_k, Metric::Cosine)?
    } else {
        1.0
    };
    Ok(Embedding2D {
        coords,
        config: config.clone(),
        trustworthiness,
    })
}

/// Full pipeline: kNN graph, fuzzy weights, layout.
pub fn embed(vectors: &[f64], d: usize, config: &EmbedConfig) -> Result<Embedding2D> {
    if d == 0 || !vectors.len().is_multiple_of(d) {
        return Err(Error::dims("vectors (multiple of d)", d, vectors.len()));
    }
    let n = vectors.len() / d;
    if n <= config.neighbors {
        return Err(Error::InvalidArgument(format!(
            "embedding needs more points ({n}) than neighbors ({})",
            config.neighbors
        )));
    }
    let knn = knn_graph(vectors, d, config.neighbors)?;
    let fuzzy = fuzzy_weights(&knn)?;
    layout(vectors, d, &fuzzy.graph, config)
}

/// `feature_id,x,y` rows for the given feature names.
pub fn coords_csv(names: &[String], coords: &[[f64; 2]]) -> String {
    let mut out = String::from("feature_id,x,y\n");
    for (name, c) in names.iter().zip(coords) {
        writeln!(out, "{name},{:.8},{:.8}", c[0], c[1]).unwrap();
    }
    out
}

/// Scatter plot; `values` in [0, 1] (e.g. branch fractions) set the color
/// from blue (0) to red (1).
pub fn scatter_svg(coords: &[[f64; 2]], values: Option<&[f64]>, title: &str) -> String {
    let (w, h, pad) = (640.0, 640.0, 30.0);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let span = |a: usize| if hi[a] > lo[a] { hi[a] - lo[a] } else { 1.0 };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        crate::branch::xml_escape(title)
    )
    .unwrap();
    for (i, c) in coords.iter().enumerate() {
        let x = pad + (c[0] - lo[0]) / span(0) * (w - 2.0 * pad);
        let y = h - pad - (c[1] - lo[1]) / span(1) * (h - 2.0 * pad);
        let t = values.and_then(|v| v.get(i)).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let (r, b) = ((255.0 * t).round() as u8, (255.0 * (1.0 - t)).round() as u8);
        writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="rgb({r},60,{b})" fill-opacity="0.8"/>"#
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
