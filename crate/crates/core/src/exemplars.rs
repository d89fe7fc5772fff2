//! Dataset exemplars: per-image feature activations, split into
//! equal-percentile activation levels and sampled from each level.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sae::SaeParams;
use crate::store::{read_shard, ActivationShard, LayerManifest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageActivation {
    pub image_id: u64,
    /// Max over the image's stored vectors of the feature's code value.
    pub activation: f64,
    /// Position attaining the max (lowest position on ties).
    pub position_id: u32,
}

/// Accumulates per-image maxima; the result does not depend on the order
/// rows are fed in.
#[derive(Debug, Default)]
struct PerImageMax {
    best: BTreeMap<u64, (f64, u32)>,
}

impl PerImageMax {
    fn offer(&mut self, image: u64, value: f64, position: u32) {
        self.best
            .entry(image)
            .and_modify(|(v, p)| {
                if value > *v || (value == *v && position < *p) {
                    *v = value;
                    *p = position;
                }
            })
            .or_insert((value, position));
    }

    fn finish(self) -> Vec<ImageActivation> {
        self.best
            .into_iter()
            .map(|(image_id, (activation, position_id))| ImageActivation {
                image_id,
                activation,
                position_id,
            })
            .collect()
    }
}

fn scan(params: &SaeParams, shard: &ActivationShard, feature: usize, acc: &mut PerImageMax) -> Result<()> {
    if shard.d() != params.d() {
        return Err(Error::dims("shard width vs checkpoint d", params.d(), shard.d()));
    }
    let mut x = vec![0.0; shard.d()];
    for i in 0..shard.count() {
        for (dst, &src) in x.iter_mut().zip(shard.row(i)) {
            *dst = f64::from(src);
        }
        let z = params.encode_sparse(&x)?.get(feature);
        acc.offer(shard.image_ids()[i], z, shard.position_ids()[i]);
    }
    Ok(())
}

fn check_feature(params: &SaeParams, feature: usize) -> Result<()> {
    if feature >= params.l() {
        return Err(Error::InvalidArgument(format!(
            "feature {feature} out of range, the dictionary has {} features",
            params.l()
        )));
    }
    Ok(())
}

/// Per-image max activation of `feature`, ordered by image id. Images where
/// the feature is never selected report 0.
pub fn feature_activations(
    params: &SaeParams,
    shards: &[ActivationShard],
    feature: usize,
) -> Result<Vec<ImageActivation>> {
    check_feature(params, feature)?;
    let mut acc = PerImageMax::default();
    for s in shards {
        scan(params, s, feature, &mut acc)?;
    }
    Ok(acc.finish())
}

/// Same as [`feature_activations`], reading the manifest's shards one at a time.
pub fn feature_activations_from_manifest(
    params: &SaeParams,
    manifest: &LayerManifest,
    feature: usize,
) -> Result<Vec<ImageActivation>> {
    check_feature(params, feature)?;
    let mut acc = PerImageMax::default();
    for path in manifest.shard_paths() {
        scan(params, &read_shard(&path)?, feature, &mut acc)?;
    }
    Ok(acc.finish())
}

/// Images by descending activation, ties by image id.
pub fn rank_images(activations: &[ImageActivation]) -> Vec<ImageActivation> {
    let mut v = activations.to_vec();
    v.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.image_id.cmp(&b.image_id)));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Percentile range `(lo, hi]`.
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    /// Closed activation range of the members; `None` for an empty bucket.
    pub activation_range: Option<(f64, f64)>,
    pub members: usize,
    pub samples: Vec<ImageActivation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarReport {
    pub feature_id: usize,
    pub activations: Vec<ImageActivation>,
    pub buckets: Vec<Bucket>,
}

/// Bucket index of each positive activation. With `r` the number of positive
/// activations `<= v` out of `n`, `v` has percentile rank `100 r / n` and
/// falls in bucket `b` covering `(100 b / B, 100 (b + 1) / B]`. Equal values
/// share the highest rank, so ties land in the upper bucket.
pub fn bucket_assignment(values: &[f64], n_buckets: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let rank = sorted.partition_point(|s| s <= v);
            (rank * n_buckets).div_ceil(n) - 1
        })
        .collect()
}

/// Split the positive activations into `n_buckets` equal-percentile levels
/// and draw up to `per_bucket` seeded samples from each.
pub fn bucket_sample(
    feature_id: usize,
    activations: &[ImageActivation],
    n_buckets: usize,
    per_bucket: usize,
    seed: u64,
) -> Result<ExemplarReport> {
    if n_buckets == 0 {
        return Err(Error::InvalidArgument("n_buckets must be >= 1".into()));
    }
    let positive: Vec<ImageActivation> = activations.iter().copied().filter(|a| a.activation > 0.0).collect();
    let values: Vec<f64> = positive.iter().map(|a| a.activation).collect();
    let assignment = bucket_assignment(&values, n_buckets);
    let mut members: Vec<Vec<ImageActivation>> = vec![Vec::new(); n_buckets];
    for (a, b) in positive.iter().zip(assignment) {
        members[b].push(*a);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buckets = members
        .into_iter()
        .enumerate()
        .map(|(b, mut m)| {
            m.sort_by_key(|x| x.image_id);
            let activation_range = m.iter().map(|a| a.activation).fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((f64::min(lo, v), f64::max(hi, v))),
            });
            let take = per_bucket.min(m.len());
            let mut samples: Vec<ImageActivation> = if take == 0 {
                Vec::new()
            } else {
                index::sample(&mut rng, m.len(), take)
                    .into_iter()
                    .map(|i| m[i])
                    .collect()
            };
            samples.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.image_id.cmp(&b.image_id)));
            Bucket {
                percentile_lo: 100.0 * b as f64 / n_buckets as f64,
                percentile_hi: 100.0 * (b + 1) as f64 / n_buckets as f64,
                activation_range,
                members: m.len(),
                samples,
            }
        })
        .collect();
    Ok(ExemplarReport {
        feature_id,
        activations: activations.to_vec(),
        buckets,
    })
}

/// Flat `feature_id,image_id,activation,position_id,bucket` export of the
/// sampled exemplars.
pub fn exemplars_csv(report: &ExemplarReport, layer: &str) -> String {
    let name = crate::feature_name(layer, report.feature_id);
    let mut out = String::from("feature_id,image_id,activation,position_id,bucket\n");
    for (b, bucket) in report.buckets.iter().enumerate() {
        for s in &bucket.samples {
            writeln!(out, "{name},{},{:.8},{},{b}", s.image_id, s.activation, s.position_id).unwrap();
        }
    }
    out
}
