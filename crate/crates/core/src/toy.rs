//! Synthetic superposition data with a known ground-truth dictionary.
//!
//! `m` unit directions live in `R^d` (typically `m > d`). Each sample mixes a
//! few of them with amplitudes in `[0.5, 1.0]` plus isotropic gaussian noise.
//! A trained SAE is scored by how well its decoder vectors recover the
//! directions.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, norm};
use crate::sae::SaeParams;
use crate::store::ActivationShard;

/// Maximum allowed |cosine| between two ground-truth directions.
pub const MAX_PAIR_COSINE: f64 = 0.9;
const MAX_RETRIES: usize = 1000;
const AMPLITUDE_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDictionary {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    /// `m x d` row-major, unit L2 norm per row.
    pub directions: Vec<f64>,
}

impl GroundTruthDictionary {
    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.d..(i + 1) * self.d]
    }
}

pub fn gen_dictionary(m: usize, d: usize, seed: u64) -> Result<GroundTruthDictionary> {
    gen_dictionary_with(m, d, seed, false)
}

/// Seeded isotropic unit directions. With `orthogonalize` (requires `m <= d`)
/// rows are Gram-Schmidt orthonormalized as they are drawn.
pub fn gen_dictionary_with(m: usize, d: usize, seed: u64, orthogonalize: bool) -> Result<GroundTruthDictionary> {
    if m == 0 || d < 2 {
        return Err(Error::InvalidArgument("gen_dictionary needs m >= 1 and d >= 2".into()));
    }
    if orthogonalize && m > d {
        return Err(Error::InvalidArgument(format!(
            "cannot orthogonalize {m} directions in {d} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<f64> = Vec::with_capacity(m * d);
    let mut retries = 0;
    let mut i = 0;
    while i < m {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        if orthogonalize {
            for prev in directions.chunks_exact(d) {
                let c = dot(&v, prev);
                axpy(-c, prev, &mut v);
            }
        }
        let n = norm(&v);
        let ok = n > 1e-8 && {
            v.iter_mut().for_each(|x| *x /= n);
            directions
                .chunks_exact(d)
                .all(|prev| dot(&v, prev).abs() < MAX_PAIR_COSINE)
        };
        if ok {
            directions.extend_from_slice(&v);
            i += 1;
        } else {
            retries += 1;
            if retries > MAX_RETRIES {
                return Err(Error::DictionaryGeneration {
                    m,
                    d,
                    bound: MAX_PAIR_COSINE,
                    retries: MAX_RETRIES,
                });
            }
        }
    }
    Ok(GroundTruthDictionary { m, d, seed, directions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub x: Vec<f64>,
    /// Ground-truth features used, ascending.
    pub active_set: Vec<usize>,
    /// Amplitude of each entry of `active_set`.
    pub amplitudes: Vec<f64>,
}

/// Draw `n` samples: sparsity `s ~ U{1..=s_max}`, `s` distinct features,
/// amplitudes `~ U[0.5, 1.0]`, plus `N(0, noise_sigma^2)` per coordinate.
pub fn gen_samples(
    dict: &GroundTruthDictionary,
    n: usize,
    s_max: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if s_max == 0 || s_max > dict.m {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= s_max <= m, got s_max={s_max}, m={}",
            dict.m
        )));
    }
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else if noise_sigma == 0.0 {
        None
    } else {
        return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let s = rng.random_range(1..=s_max);
        let mut active_set = index::sample(&mut rng, dict.m, s).into_vec();
        active_set.sort_unstable();
        let amplitudes: Vec<f64> = (0..s)
            .map(|_| rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1))
            .collect();
        let mut x = vec![0.0; dict.d];
        for (&f, &a) in active_set.iter().zip(&amplitudes) {
            axpy(a, dict.direction(f), &mut x);
        }
        if let Some(noise) = &noise {
            x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        out.push(SyntheticSample {
            x,
            active_set,
            amplitudes,
        });
    }
    Ok(out)
}

/// Pack samples into activation shards (`image_id` = sample index,
/// `position_id` = 0), at most `rows_per_shard` rows each.
pub fn samples_to_shards(samples: &[SyntheticSample], d: usize, rows_per_shard: usize) -> Result<Vec<ActivationShard>> {
    if rows_per_shard == 0 {
        return Err(Error::InvalidArgument("rows_per_shard must be >= 1".into()));
    }
    samples
        .chunks(rows_per_shard)
        .enumerate()
        .map(|(c, chunk)| {
            let base = (c * rows_per_shard) as u64;
            let mut rows = Vec::with_capacity(chunk.len() * d);
            for s in chunk {
                if s.x.len() != d {
                    return Err(Error::dims("sample width", d, s.x.len()));
                }
                rows.extend(s.x.iter().map(|&v| v as f32));
            }
            let images = (0..chunk.len() as u64).map(|i| base + i).collect();
            ActivationShard::new(d, rows, images, vec![0; chunk.len()])
        })
        .collect()
}

/// Mean over true directions of the best |cosine| against any nonzero row of
/// `rows` (`n x d`).
pub fn recovery_score_rows(rows: &[f64], d: usize, dict: &GroundTruthDictionary) -> Result<f64> {
    if d != dict.d || !rows.len().is_multiple_of(d) {
        return Err(Error::dims("learned dictionary width", dict.d, d));
    }
    let live: Vec<&[f64]> = rows.chunks_exact(d).filter(|r| r.iter().any(|&v| v != 0.0)).collect();
    let total: f64 = (0..dict.m)
        .map(|i| {
            let t = dict.direction(i);
            live.iter()
                .filter_map(|r| cosine(t, r))
                .fold(0.0f64, |best, c| best.max(c.abs()))
                .min(1.0)
        })
        .sum();
    Ok(total / dict.m as f64)
}

pub fn recovery_score(learned: &SaeParams, dict: &GroundTruthDictionary) -> Result<f64> {
    recovery_score_rows(learned.decoder_rows(), learned.d(), dict)
}

/// A complete synthetic task: dictionary, samples and shard packing, all
/// derived from one seed (dictionary `seed`, samples `seed + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTask {
    pub d: usize,
    pub m: usize,
    pub samples: usize,
    pub s_max: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub rows_per_shard: usize,
}

impl Default for ToyTask {
    /// The reference task: 48 directions in 32 dimensions, up to 3 active.
    fn default() -> Self {
        ToyTask {
            d: 32,
            m: 48,
            samples: 200_000,
            s_max: 3,
            noise_sigma: 0.01,
            seed: 0,
            rows_per_shard: 50_000,
        }
    }
}

impl ToyTask {
    pub fn dictionary(&self) -> Result<GroundTruthDictionary> {
        gen_dictionary(self.m, self.d, self.seed)
    }

    pub fn build(&self) -> Result<(GroundTruthDictionary, Vec<ActivationShard>)> {
        let dict = self.dictionary()?;
        let samples = gen_samples(
            &dict,
            self.samples,
            self.s_max,
            self.noise_sigma,
            self.seed.wrapping_add(1),
        )?;
        let shards = samples_to_shards(&samples, self.d, self.rows_per_shard)?;
        Ok((dict, shards))
    }
}
