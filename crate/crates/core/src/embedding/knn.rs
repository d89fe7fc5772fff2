use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Distance used for the high-dimensional side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// Pairwise distance oracle over `n x d` row-major vectors.
pub(crate) struct Distances<'a> {
    rows: &'a [f64],
    d: usize,
    sq_norms: Vec<f64>,
    metric: Metric,
}

impl<'a> Distances<'a> {
    pub(crate) fn new(rows: &'a [f64], d: usize, metric: Metric) -> Result<Self> {
        if d == 0 || !rows.len().is_multiple_of(d) {
            return Err(Error::dims("vectors (multiple of d)", d, rows.len()));
        }
        let sq_norms: Vec<f64> = rows.chunks_exact(d).map(|r| dot(r, r)).collect();
        if metric == Metric::Cosine {
            if let Some(i) = sq_norms.iter().position(|&s| s == 0.0) {
                return Err(Error::ZeroVector(i));
            }
        }
        Ok(Distances {
            rows,
            d,
            sq_norms,
            metric,
        })
    }

    pub(crate) fn n(&self) -> usize {
        self.sq_norms.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        match self.metric {
            Metric::Cosine => {
                let c = dot(a, b) / (self.sq_norms[i] * self.sq_norms[j]).sqrt();
                (1.0 - c).clamp(0.0, 2.0)
            }
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }

    /// All other points of `i`, nearest first, ties by index.
    pub(crate) fn ranked_from(&self, i: usize) -> Vec<(f64, usize)> {
        let mut v: Vec<(f64, usize)> = (0..self.n()).filter(|&j| j != i).map(|j| (self.get(i, j), j)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v
    }
}

/// Exact k-nearest-neighbor lists (self excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    /// `n x k`, nearest first, ties by lower index.
    pub neighbors: Vec<usize>,
    /// `n x k`, matching `neighbors`.
    pub distances: Vec<f64>,
}

impl KnnGraph {
    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn distances_of(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Brute-force kNN under cosine distance `1 - cos`.
pub fn knn_graph(vectors: &[f64], d: usize, k: usize) -> Result<KnnGraph> {
    knn_graph_with(vectors, d, k, Metric::Cosine)
}

pub fn knn_graph_with(vectors: &[f64], d: usize, k: usize, metric: Metric) -> Result<KnnGraph> {
    let dist = Distances::new(vectors, d, metric)?;
    let n = dist.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "knn needs 1 <= k < n, got k={k}, n={n}"
        )));
    }
    let lists: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = dist.ranked_from(i);
            r.truncate(k);
            r
        })
        .collect();
    let mut neighbors = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for list in lists {
        for (dd, j) in list {
            neighbors.push(j);
            distances.push(dd);
        }
    }
    Ok(KnnGraph {
        n,
        k,
        neighbors,
        distances,
    })
}
