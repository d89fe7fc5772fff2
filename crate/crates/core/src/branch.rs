//! Branch specialization: how much of a feature's decoder vector lies inside
//! one branch's channel slice.
//!
//! The fraction is the L2 norm ratio `|f[slice]| / |f|`. Over a full disjoint
//! partition of the channels it is the *squared* fractions that sum to one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_name;
use crate::sae::SaeParams;
use crate::store::{BranchSlice, LayerManifest};

/// `|row[slice]| / |row|`, or `None` for a zero row.
pub fn branch_fraction(row: &[f64], slice: &BranchSlice) -> Result<Option<f64>> {
    if slice.start >= slice.end || slice.end > row.len() {
        return Err(Error::InvalidArgument(format!(
            "slice {} [{}, {}) outside [0, {})",
            slice.name,
            slice.start,
            slice.end,
            row.len()
        )));
    }
    let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(None);
    }
    // scaled by the max magnitude: no overflow, and constant rows sum exactly
    let sq = |v: &f64| (v / scale) * (v / scale);
    let total: f64 = row.iter().map(sq).sum();
    let inside: f64 = row[slice.range()].iter().map(sq).sum();
    Ok(Some((inside / total).sqrt().min(1.0)))
}

/// Equal-width histogram over `[0, 1]`. A value on an interior edge counts in
/// the lower bin; 0.0 goes to the first bin and 1.0 to the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn unit(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be >= 1".into()));
        }
        let edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
        Ok(Histogram {
            edges,
            counts: vec![0; bins],
        })
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts.len();
        let mut b = ((v * bins as f64).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
        // settle rounding at the edges against the stored edge values
        while b > 0 && v <= self.edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v > self.edges[b + 1] {
            b += 1;
        }
        b
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFractionReport {
    pub layer_name: String,
    pub branch: String,
    /// Per feature; `None` for zero-norm decoder vectors.
    pub fractions: Vec<Option<f64>>,
    pub histogram: Histogram,
    /// Live features by descending fraction, ties by feature id.
    pub top_features: Vec<(usize, f64)>,
}

fn ranked(pairs: impl IntoIterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = pairs.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

pub fn feature_fractions(params: &SaeParams, slice: &BranchSlice) -> Result<Vec<Option<f64>>> {
    (0..params.l())
        .map(|j| branch_fraction(params.decoder_row(j), slice))
        .collect()
}

/// Fractions and histogram for one branch. `top_n` bounds `top_features`.
pub fn branch_histogram(
    params: &SaeParams,
    layer_name: &str,
    slice: &BranchSlice,
    bins: usize,
    top_n: usize,
) -> Result<BranchFractionReport> {
    let mut histogram = Histogram::unit(bins)?;
    let fractions = feature_fractions(params, slice)?;
    for f in fractions.iter().flatten() {
        histogram.add(*f);
    }
    let mut top_features = ranked(fractions.iter().enumerate().filter_map(|(j, f)| f.map(|f| (j, f))));
    top_features.truncate(top_n);
    Ok(BranchFractionReport {
        layer_name: layer_name.to_string(),
        branch: slice.name.clone(),
        fractions,
        histogram,
        top_features,
    })
}

/// `(branch name, [(feature, fraction)])` per branch.
pub type SpecializationTable = Vec<(String, Vec<(usize, f64)>)>;

/// Per branch (manifest order), the live features with fraction >= threshold,
/// sorted by descending fraction then id. A feature may appear under several
/// branches.
pub fn specialization_table(
    params: &SaeParams,
    manifest: &LayerManifest,
    threshold: f64,
) -> Result<SpecializationTable> {
    if params.d() != manifest.d {
        return Err(Error::dims("checkpoint d vs manifest d", manifest.d, params.d()));
    }
    manifest
        .branches
        .iter()
        .map(|slice| {
            let fr = feature_fractions(params, slice)?;
            let hits = fr
                .into_iter()
                .enumerate()
                .filter_map(|(j, f)| f.filter(|&f| f >= threshold).map(|f| (j, f)));
            Ok((slice.name.clone(), ranked(hits)))
        })
        .collect()
}

/// Largest deviation of the per-feature sum of squared fractions from 1 over
/// the given branches (meaningful for a full partition). `None` if no live
/// features.
pub fn partition_residual(params: &SaeParams, branches: &[BranchSlice]) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for j in 0..params.l() {
        let row = params.decoder_row(j);
        let mut sum = 0.0;
        let mut live = false;
        for b in branches {
            if let Some(f) = branch_fraction(row, b)? {
                sum += f * f;
                live = true;
            }
        }
        if live {
            let r = (sum - 1.0).abs();
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
    }
    Ok(worst)
}

/// `feature_id,branch,fraction` rows; undefined fractions are left empty.
pub fn fractions_csv(reports: &[BranchFractionReport]) -> String {
    let mut out = String::from("feature_id,branch,fraction\n");
    for r in reports {
        for (j, f) in r.fractions.iter().enumerate() {
            let name = feature_name(&r.layer_name, j);
            match f {
                Some(f) => writeln!(out, "{name},{},{f:.8}", r.branch),
                None => writeln!(out, "{name},{},", r.branch),
            }
            .expect("write to string");
        }
    }
    out
}

/// Minimal SVG bar chart of a histogram.
pub fn histogram_svg(hist: &Histogram, title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let max = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (w - 2.0 * pad) / hist.counts.len() as f64;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(title)
    )
    .unwrap();
    for (i, &c) in hist.counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * c as f64 / max;
        let x = pad + i as f64 * bar_w;
        let y = h - pad - bh;
        writeln!(
            s,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{bh:.2}" fill="#4a78b5"><title>[{:.3}, {:.3}]: {c}</title></rect>"##,
            (bar_w - 1.0).max(0.5),
            hist.edges[i],
            hist.edges[i + 1]
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="11">0</text>"#,
        h - pad + 16.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">1</text>"#,
        w - pad - 6.0,
        h - pad + 16.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
