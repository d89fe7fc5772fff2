use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

use super::fuzzy::NeighborGraph;

/// Initial coordinates are rescaled so the largest |coordinate| is this.
pub const INIT_EXTENT: f64 = 10.0;
const GRAD_CLIP: f64 = 4.0;
const MIN_REPULSION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub epochs: usize,
    pub min_dist: f64,
    pub seed: u64,
    /// Negative samples per positive edge sample.
    pub negative_rate: usize,
    pub learning_rate: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            epochs: 200,
            min_dist: 0.1,
            seed: 0,
            negative_rate: 5,
            learning_rate: 1.0,
        }
    }
}

/// Top-2 principal-component scores of the row-normalized vectors, each
/// component's sign fixed so its largest-magnitude loading is positive,
/// rescaled to [`INIT_EXTENT`].
pub fn pca_init(vectors: &[f64], d: usize) -> Result<Vec<[f64; 2]>> {
    if d == 0 || !vectors.len().is_multiple_of(d) {
        return Err(Error::dims("vectors (multiple of d)", d, vectors.len()));
    }
    let n = vectors.len() / d;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, row) in vectors.chunks_exact(d).enumerate() {
        let nr = norm(row);
        let scale = if nr > 0.0 { 1.0 / nr } else { 0.0 };
        for (c, &v) in row.iter().enumerate() {
            x[(i, c)] = v * scale;
        }
    }
    for c in 0..d {
        let mean = x.column(c).sum() / n as f64;
        x.column_mut(c).add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut coords = vec![[0.0; 2]; n];
    for (axis, &e) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(e).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, a)| if a.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        for (i, c) in coords.iter_mut().enumerate() {
            c[axis] = x.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
    }
    let extent = coords.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if extent > 0.0 {
        let s = INIT_EXTENT / extent;
        coords.iter_mut().flatten().for_each(|v| *v *= s);
    }
    Ok(coords)
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn delta(a: &[f64; 2], b: &[f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Seeded attraction/repulsion refinement of `init` over a symmetrized graph.
///
/// Low-dimensional similarity is `1 / (1 + |y_i - y_j|^2)`. Each edge is
/// sampled at a rate proportional to its weight; each sample pulls both
/// endpoints together and pushes the source away from `negative_rate`
/// uniformly drawn points. `min_dist` sets the repulsion floor.
pub fn optimize_layout(
    mut coords: Vec<[f64; 2]>,
    graph: &NeighborGraph,
    config: &LayoutConfig,
) -> Result<Vec<[f64; 2]>> {
    if coords.len() != graph.n {
        return Err(Error::dims("initial coordinates", graph.n, coords.len()));
    }
    if !graph.symmetrized {
        return Err(Error::InvalidArgument("layout needs a symmetrized graph".into()));
    }
    if config.epochs == 0 || graph.edges.is_empty() {
        return Ok(coords);
    }
    let n = graph.n;
    let floor = (config.min_dist * config.min_dist).max(MIN_REPULSION_FLOOR);
    let max_w = graph.edges.iter().fold(0.0f64, |m, e| m.max(e.weight));
    let per_sample: Vec<f64> = graph.edges.iter().map(|e| max_w / e.weight).collect();
    let neg_rate = config.negative_rate as f64;
    let per_negative: Vec<f64> = per_sample.iter().map(|p| p / neg_rate.max(1.0)).collect();
    let mut next_sample = per_sample.clone();
    let mut next_negative = per_negative.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 1..=config.epochs {
        let epoch_f = epoch as f64;
        let alpha = config.learning_rate * (1.0 - (epoch - 1) as f64 / config.epochs as f64);
        for (e, edge) in graph.edges.iter().enumerate() {
            if next_sample[e] > epoch_f {
                continue;
            }
            let (i, j) = (edge.i, edge.j);
            let d2 = sq_dist(&coords[i], &coords[j]);
            if d2 > 0.0 {
                let coeff = -2.0 / (1.0 + d2);
                let g = delta(&coords[i], &coords[j]).map(|v| clip(coeff * v) * alpha);
                for (c, gc) in g.into_iter().enumerate() {
                    coords[i][c] += gc;
                    coords[j][c] -= gc;
                }
            }
            next_sample[e] += per_sample[e];

            if config.negative_rate > 0 {
                let n_neg = ((epoch_f - next_negative[e]) / per_negative[e]).floor().max(0.0) as usize;
                for _ in 0..n_neg {
                    let other = rng.random_range(0..n);
                    if other == i {
                        continue;
                    }
                    let d2 = sq_dist(&coords[i], &coords[other]);
                    if d2 == 0.0 {
                        continue;
                    }
                    let coeff = 2.0 / ((floor + d2) * (1.0 + d2));
                    let g = delta(&coords[i], &coords[other]).map(|v| clip(coeff * v) * alpha);
                    for (c, gc) in g.into_iter().enumerate() {
                        coords[i][c] += gc;
                    }
                }
                next_negative[e] += n_neg as f64 * per_negative[e];
            }
        }
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "layout coordinates".into(),
            index: 0,
        });
    }
    Ok(coords)
}
