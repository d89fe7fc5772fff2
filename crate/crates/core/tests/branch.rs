mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sae_branch::branch::*;
use sae_branch::sae::SaeParams;
use sae_branch::store::{BranchSlice, LayerManifest};

/// Split `[0, d)` at the given cut points.
fn partition(d: usize, cuts: &[usize]) -> Vec<BranchSlice> {
    let mut points: Vec<usize> = cuts.iter().map(|c| c % d).filter(|&c| c > 0).collect();
    points.push(0);
    points.push(d);
    points.sort_unstable();
    points.dedup();
    points
        .windows(2)
        .enumerate()
        .map(|(i, w)| BranchSlice::new(format!("b{i}"), w[0], w[1]))
        .collect()
}

fn params_from_rows(d: usize, rows: Vec<f64>) -> SaeParams {
    let l = rows.len() / d;
    SaeParams::from_parts(d, l, 1, rows, vec![0.0; l], vec![0.0; d], None).unwrap()
}

proptest! {
    #[test]
    fn squared_fractions_sum_to_one(
        row in prop::collection::vec(-1e3f64..1e3, 1..64),
        cuts in prop::collection::vec(any::<usize>(), 0..8),
        scale in 1e-6f64..1e6,
    ) {
        let slices = partition(row.len(), &cuts);
        if row.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let mut sum = 0.0;
        for s in &slices {
            let f = branch_fraction(&row, s).unwrap().unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
            let g = branch_fraction(&scaled, s).unwrap().unwrap();
            prop_assert!((f - g).abs() < 1e-12);
            sum += f * f;
        }
        prop_assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_row_gives_square_root_of_width_ratio(d in 1usize..600, a in any::<usize>(), b in any::<usize>(), v in 0.01f64..10.0) {
        let (lo, hi) = { let (x, y) = (a % d, b % d); (x.min(y), x.max(y) + 1) };
        let f = branch_fraction(&vec![v; d], &BranchSlice::new("s", lo, hi)).unwrap().unwrap();
        prop_assert_eq!(f, ((hi - lo) as f64 / d as f64).sqrt());
    }

    #[test]
    fn histogram_matches_recount(seed in any::<u64>(), bins in 1usize..25, lo in 0usize..16, width in 1usize..16) {
        let d = 32;
        let mut r = rng(seed);
        let mut rows = uniform(&mut r, 64 * d, -1.0, 1.0);
        // a few exactly-supported and dead rows to hit 0, 1 and undefined
        rows[..d].fill(0.0);
        rows[d..2 * d].fill(0.0);
        rows[d + lo] = 1.0;
        rows[2 * d..3 * d].fill(1.0);
        let slice = BranchSlice::new("s", lo, lo + width);
        let p = params_from_rows(d, rows.clone());
        let report = branch_histogram(&p, "layer", &slice, bins, 5).unwrap();
        let live: Vec<f64> = report.fractions.iter().flatten().copied().collect();
        prop_assert_eq!(live.len(), 63);
        prop_assert_eq!(report.fractions[0], None);
        prop_assert_eq!(&report.histogram.counts, &recount_histogram(&live, bins));
        prop_assert_eq!(report.histogram.total(), 63);

        // feature order does not matter
        let mut reversed = Vec::with_capacity(rows.len());
        for row in rows.chunks(d).rev() {
            reversed.extend_from_slice(row);
        }
        let rev = branch_histogram(&params_from_rows(d, reversed), "layer", &slice, bins, 5).unwrap();
        prop_assert_eq!(rev.histogram, report.histogram);
    }
}

#[test]
fn fraction_examples() {
    let s = BranchSlice::new("5x5", 128, 256);
    assert_eq!(branch_fraction(&vec![0.7; 512], &s).unwrap(), Some(0.5));
    let mut inside = vec![0.0; 512];
    inside[200] = -3.0;
    assert_eq!(branch_fraction(&inside, &s).unwrap(), Some(1.0));
    let mut outside = vec![0.0; 512];
    outside[300] = 1.0;
    assert_eq!(branch_fraction(&outside, &s).unwrap(), Some(0.0));
    assert_eq!(branch_fraction(&[0.0; 512], &s).unwrap(), None);
}

#[test]
fn histogram_examples() {
    let rows = vec![0.0, 1.0, 1.0, 0.0];
    let p = params_from_rows(2, rows);
    let r = branch_histogram(&p, "l", &BranchSlice::new("a", 0, 1), 2, 10).unwrap();
    assert_eq!(r.histogram.counts, vec![1, 1]);
    assert_eq!(r.histogram.edges, vec![0.0, 0.5, 1.0]);
    assert_eq!(r.top_features, vec![(1, 1.0), (0, 0.0)]);
    assert!(branch_histogram(&p, "l", &BranchSlice::new("a", 0, 1), 0, 10).is_err());
    assert!(branch_histogram(&p, "l", &BranchSlice::new("a", 0, 3), 2, 10).is_err());
}

fn manifest(d: usize, branches: Vec<BranchSlice>) -> LayerManifest {
    LayerManifest {
        layer_name: "mixed4d".into(),
        d,
        model_tag: "test".into(),
        branches,
        shards: vec![],
        base_dir: Default::default(),
    }
}

#[test]
fn planted_block_features_are_assigned_to_their_branch() {
    let (d, widths) = (12, [3usize, 4, 5]);
    let m = manifest(
        d,
        vec![
            BranchSlice::new("1x1", 0, 3),
            BranchSlice::new("3x3", 3, 7),
            BranchSlice::new("5x5", 7, 12),
        ],
    );
    // feature j < 9 lives inside branch j % 3; features 9 and 10 straddle
    let mut r = rng(4);
    let mut rows = Vec::new();
    let mut planted: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for j in 0..9 {
        let b = j % 3;
        let start: usize = widths[..b].iter().sum();
        let mut row = vec![0.0; d];
        for v in &mut row[start..start + widths[b]] {
            *v = r.random_range(0.1..1.0);
        }
        rows.extend(row);
        planted[b].push(j);
    }
    rows.extend(vec![1.0; d]);
    let mut mostly_first = vec![0.0; d];
    mostly_first[..3].fill(1.0);
    mostly_first[11] = 1.0;
    rows.extend(mostly_first);
    let p = params_from_rows(d, rows);

    let table = specialization_table(&p, &m, 1.0).unwrap();
    for (b, (name, hits)) in table.iter().enumerate() {
        assert_eq!(name, &m.branches[b].name);
        let mut ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
        ids.sort_unstable();
        assert_eq!(ids, planted[b]);
    }
    let everything = specialization_table(&p, &m, 0.0).unwrap();
    assert!(everything.iter().all(|(_, hits)| hits.len() == 11));
    let half = specialization_table(&p, &m, 0.8).unwrap();
    assert_eq!(half[0].1.last().unwrap().0, 10);
    for (_, hits) in &half {
        assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
    }
    assert!(partition_residual(&p, &m.branches).unwrap().unwrap() < 1e-12);
    assert!(specialization_table(&p, &manifest(5, vec![BranchSlice::new("a", 0, 5)]), 0.5).is_err());
}

#[test]
fn csv_format() {
    let p = params_from_rows(2, vec![3.0, 4.0, 0.0, 0.0]);
    let r = branch_histogram(&p, "mixed4b", &BranchSlice::new("5x5", 0, 1), 4, 2).unwrap();
    assert_eq!(
        fractions_csv(&[r]),
        "feature_id,branch,fraction\nmixed4b/f/0,5x5,0.60000000\nmixed4b/f/1,5x5,\n"
    );
}
