use rayon::prelude::*;

use crate::error::{Error, Result};

use super::knn::{Distances, Metric};

/// Trustworthiness of a 2D embedding:
///
/// ```text
/// T(k) = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_i} (r(i, j) - k)
/// ```
///
/// where `U_i` are the embedded k-nearest neighbors of `i` that are not among
/// its k nearest input-space neighbors and `r(i, j)` is the input-space rank
/// of `j` (1 = nearest, ties by index).
pub fn trustworthiness(vectors: &[f64], d: usize, coords: &[[f64; 2]], k: usize, metric: Metric) -> Result<f64> {
    let high = Distances::new(vectors, d, metric)?;
    let n = high.n();
    if coords.len() != n {
        return Err(Error::dims("embedding coordinates", n, coords.len()));
    }
    if k == 0 || 2 * n <= 3 * k + 1 {
        return Err(Error::InvalidArgument(format!(
            "trustworthiness needs 1 <= k and 3k + 1 < 2n, got k={k}, n={n}"
        )));
    }
    let flat: Vec<f64> = coords.iter().flat_map(|c| c.iter().copied()).collect();
    let low = Distances::new(&flat, 2, Metric::Euclidean)?;

    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rank = vec![0usize; n];
            for (r, &(_, j)) in high.ranked_from(i).iter().enumerate() {
                rank[j] = r + 1;
            }
            low.ranked_from(i)
                .iter()
                .take(k)
                .filter(|&&(_, j)| rank[j] > k)
                .map(|&(_, j)| (rank[j] - k) as f64)
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}
