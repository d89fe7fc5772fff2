use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::knn::KnnGraph;

pub const BISECTION_ITERATIONS: usize = 64;
/// Accepted gap between the weight sum at the returned bandwidth and its target.
pub const BANDWIDTH_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub n: usize,
    pub k: usize,
    /// Sorted by `(i, j)`.
    pub edges: Vec<Edge>,
    pub symmetrized: bool,
}

impl NeighborGraph {
    /// Unit-weight directed graph straight from the kNN lists.
    pub fn from_knn(knn: &KnnGraph) -> Self {
        let edges = (0..knn.n)
            .flat_map(|i| knn.neighbors_of(i).iter().map(move |&j| Edge { i, j, weight: 1.0 }))
            .collect();
        NeighborGraph {
            n: knn.n,
            k: knn.k,
            edges,
            symmetrized: false,
        }
    }
}

/// Weight sum each point's bandwidth is solved for. The count includes the
/// point itself, so `k` stored neighbors give `log2(k + 1)`.
pub fn bandwidth_target(k: usize) -> f64 {
    ((k + 1) as f64).log2()
}

fn weight_sum(gaps: &[f64], sigma: f64) -> f64 {
    gaps.iter().map(|g| (-g / sigma).exp()).sum()
}

/// Solve `sum_j exp(-gap_j / sigma) = target` for `sigma` by bisection.
pub fn solve_bandwidth(gaps: &[f64], target: f64, point: usize) -> Result<f64> {
    if gaps.iter().all(|&g| g == 0.0) {
        // the sum does not depend on sigma
        return if (gaps.len() as f64 - target).abs() <= BANDWIDTH_TOLERANCE {
            Ok(1.0)
        } else {
            Err(Error::BisectionFailed { point, iterations: 0 })
        };
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut sigma = mean_gap;
    for _ in 0..BISECTION_ITERATIONS {
        let s = weight_sum(gaps, sigma);
        if s == target {
            break;
        }
        if s > target {
            hi = sigma;
            sigma = 0.5 * (lo + hi);
        } else {
            lo = sigma;
            sigma = if hi.is_finite() { 0.5 * (lo + hi) } else { sigma * 2.0 };
        }
    }
    if sigma > 0.0 && (weight_sum(gaps, sigma) - target).abs() <= BANDWIDTH_TOLERANCE {
        Ok(sigma)
    } else {
        Err(Error::BisectionFailed {
            point,
            iterations: BISECTION_ITERATIONS,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub graph: NeighborGraph,
    /// Per point: distance to its nearest neighbor.
    pub rho: Vec<f64>,
    /// Per point: solved bandwidth.
    pub sigma: Vec<f64>,
}

/// Per-point membership weights `exp(-max(0, d_ij - rho_i) / sigma_i)`,
/// before symmetrization. Returned as `n x k`, aligned with `knn.neighbors`.
pub fn directed_weights(knn: &KnnGraph) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let target = bandwidth_target(knn.k);
    let mut rho = Vec::with_capacity(knn.n);
    let mut sigma = Vec::with_capacity(knn.n);
    let mut weights = Vec::with_capacity(knn.n * knn.k);
    for i in 0..knn.n {
        let dists = knn.distances_of(i);
        let r = dists[0];
        let gaps: Vec<f64> = dists.iter().map(|d| (d - r).max(0.0)).collect();
        let s = solve_bandwidth(&gaps, target, i)?;
        weights.extend(gaps.iter().map(|g| (-g / s).exp()));
        rho.push(r);
        sigma.push(s);
    }
    Ok((weights, rho, sigma))
}

/// Fuzzy neighbor weights, symmetrized by `w = w1 + w2 - w1 w2`.
/// Edges whose weight underflows to zero are dropped.
pub fn fuzzy_weights(knn: &KnnGraph) -> Result<FuzzyGraph> {
    let (weights, rho, sigma) = directed_weights(knn)?;
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..knn.n {
        for (&j, &w) in knn.neighbors_of(i).iter().zip(&weights[i * knn.k..(i + 1) * knn.k]) {
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w1) in &directed {
        let w2 = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = symmetrize(w1, w2);
        sym.insert((i, j), w);
        sym.insert((j, i), w);
    }
    let edges = sym
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|((i, j), weight)| Edge { i, j, weight })
        .collect();
    Ok(FuzzyGraph {
        graph: NeighborGraph {
            n: knn.n,
            k: knn.k,
            edges,
            symmetrized: true,
        },
        rho,
        sigma,
    })
}

/// Probabilistic OR of two memberships.
pub fn symmetrize(w1: f64, w2: f64) -> f64 {
    w1 + w2 - w1 * w2
}
