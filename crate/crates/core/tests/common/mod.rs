//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sae_branch::sae::{batch_loss, SaeParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Parameters with every tensor random, including biases.
pub fn random_params(seed: u64, d: usize, l: usize, k: usize, tied: bool) -> SaeParams {
    let mut r = rng(seed);
    let enc = uniform(&mut r, l * d, -1.0, 1.0);
    let enc_bias = uniform(&mut r, l, -0.5, 0.5);
    let dec_bias = uniform(&mut r, d, -0.5, 0.5);
    let dec = (!tied).then(|| uniform(&mut r, d * l, -1.0, 1.0));
    SaeParams::from_parts(d, l, k, enc, enc_bias, dec_bias, dec).unwrap()
}

/// Top-k by repeated first-argmax: `k` passes, each taking the largest
/// unselected value (lowest index on ties).
pub fn brute_topk(v: &[f64], k: usize) -> Vec<f64> {
    let mut taken = vec![false; v.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &x) in v.iter().enumerate() {
            if !taken[i] && best.is_none_or(|b| x > v[b]) {
                best = Some(i);
            }
        }
        taken[best.unwrap()] = true;
    }
    v.iter().zip(&taken).map(|(&x, &t)| if t { x } else { 0.0 }).collect()
}

/// Pre-activation by explicit loops over the `l x d` encoder.
pub fn dense_pre_activation(p: &SaeParams, x: &[f64]) -> Vec<f64> {
    let (d, l) = (p.d(), p.l());
    let w = p.enc_weight();
    (0..l)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..d {
                s += w[j * d + i] * (x[i] - p.dec_bias()[i]);
            }
            s + p.enc_bias()[j]
        })
        .collect()
}

pub fn dense_encode(p: &SaeParams, x: &[f64]) -> Vec<f64> {
    brute_topk(&dense_pre_activation(p, x), p.k())
}

/// `W_dec z + b_dec` with `W_dec` as a `d x l` matrix.
pub fn dense_decode(p: &SaeParams, z: &[f64]) -> Vec<f64> {
    let (d, l) = (p.d(), p.l());
    let w = p.dec_weight();
    (0..d)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..l {
                s += w[i * l + j] * z[j];
            }
            s + p.dec_bias()[i]
        })
        .collect()
}

/// Smallest gap between the k-th and (k+1)-th largest pre-activation over
/// the batch rows; `INFINITY` when `k == l`.
pub fn selection_margin(p: &SaeParams, rows: &[f64]) -> f64 {
    rows.chunks_exact(p.d())
        .map(|x| {
            let mut v = dense_pre_activation(p, x);
            v.sort_by(|a, b| b.total_cmp(a));
            if p.k() < v.len() {
                v[p.k() - 1] - v[p.k()]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug)]
pub enum Tensor {
    EncWeight,
    EncBias,
    DecBias,
    DecRows,
}

fn tensor_mut(p: &mut SaeParams, t: Tensor) -> &mut [f64] {
    match t {
        Tensor::EncWeight => p.enc_weight_mut(),
        Tensor::EncBias => p.enc_bias_mut(),
        Tensor::DecBias => p.dec_bias_mut(),
        Tensor::DecRows => p.dec_rows_mut().unwrap(),
    }
}

/// Central finite differences of the mean batch MSE for every coordinate of
/// one tensor.
pub fn finite_difference(p: &SaeParams, rows: &[f64], t: Tensor, h: f64) -> Vec<f64> {
    let n = tensor_mut(&mut p.clone(), t).len();
    (0..n)
        .map(|i| {
            let mut plus = p.clone();
            tensor_mut(&mut plus, t)[i] += h;
            let mut minus = p.clone();
            tensor_mut(&mut minus, t)[i] -= h;
            (batch_loss(&plus, rows).unwrap() - batch_loss(&minus, rows).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)`, with exact agreement (including both zero)
/// counting as 0.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `sum_i sum_j n1_i W_ij n2_j` over a row-major `d_src x d_dst` matrix.
pub fn triple_loop_edge(n1: &[f64], w: &[f64], n2: &[f64]) -> f64 {
    let d_dst = n2.len();
    let mut s = 0.0;
    for i in 0..n1.len() {
        for j in 0..d_dst {
            s += n1[i] * w[i * d_dst + j] * n2[j];
        }
    }
    s
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Quadratic-scan kNN: for each point, every other point sorted by
/// (distance, index), first k kept.
pub fn knn_oracle(vectors: &[f64], d: usize, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = vectors.len() / d;
    let row = |i: usize| &vectors[i * d..(i + 1) * d];
    (0..n)
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine_distance(row(i), row(j))))
                .collect();
            all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

/// Two gaussian clusters of `n / 2` points each around orthogonal centers.
/// Returns the vectors and the cluster label of each point.
pub fn two_clusters(n: usize, d: usize, spread: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let mut v = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let noise = gaussian(&mut r, d);
        for (a, z) in noise.iter().enumerate() {
            let center = if a == c { 3.0 } else { 0.0 };
            v.push(center + spread * z);
        }
        labels.push(c);
    }
    (v, labels)
}

/// Bin of `v` on edges `b / bins`: `(lo, hi]`, except that 0 goes to the
/// first bin.
pub fn recount_histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        for (b, count) in counts.iter_mut().enumerate() {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            if (v > lo || b == 0) && v <= hi {
                *count += 1;
                break;
            }
        }
    }
    counts
}
