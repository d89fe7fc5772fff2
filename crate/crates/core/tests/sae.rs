mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use sae_branch::sae::*;
use sae_branch::store::{ActivationShard, BatchStream};
use sae_branch::Error;

proptest! {
    #[test]
    fn topk_matches_brute_force(v in prop::collection::vec(-5i32..5, 1..64), k_seed in 0usize..64) {
        // small integer values force plenty of ties
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let k = k_seed % v.len() + 1;
        let out = topk_select(&v, k).unwrap();
        prop_assert_eq!(&out, &brute_topk(&v, k));
        prop_assert!(out.iter().filter(|&&x| x != 0.0).count() <= k);
        if out.iter().all(|&x| x >= 0.0) {
            prop_assert_eq!(topk_select(&out, k).unwrap(), out);
        }
    }

    #[test]
    fn topk_is_permutation_equivariant(
        v in prop::collection::hash_set(-1000i32..1000, 2..40),
        k_seed in 0usize..40,
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let k = k_seed % v.len() + 1;
        let mut perm: Vec<usize> = (0..v.len()).collect();
        perm.shuffle(&mut rng(perm_seed));
        let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let out = topk_select(&v, k).unwrap();
        let out_p = topk_select(&permuted, k).unwrap();
        let expected: Vec<f64> = perm.iter().map(|&i| out[i]).collect();
        prop_assert_eq!(out_p, expected);
    }

    #[test]
    fn encode_selects_brute_force_top_k(seed in any::<u64>(), tied in any::<bool>()) {
        let p = random_params(seed, 6, 12, 3, tied);
        let x = uniform(&mut rng(seed ^ 1), 6, -2.0, 2.0);
        let z = p.encode(&x).unwrap();
        prop_assert!(z.iter().filter(|&&v| v != 0.0).count() <= 3);
        let oracle = dense_encode(&p, &x);
        for (a, b) in z.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let code = p.encode_sparse(&x).unwrap();
        let expected: Vec<usize> = topk_indices(&dense_pre_activation(&p, &x), 3).unwrap();
        prop_assert_eq!(code.indices, expected);
    }

    #[test]
    fn decode_equals_dense_product(seed in any::<u64>(), tied in any::<bool>(), sparse in any::<bool>()) {
        let p = random_params(seed, 5, 10, 2, tied);
        let mut z = uniform(&mut rng(seed ^ 2), 10, -1.0, 1.0);
        if sparse {
            z = brute_topk(&z, 2);
        }
        prop_assert_eq!(p.decode(&z).unwrap(), dense_decode(&p, &z));
    }
}

#[test]
fn topk_examples() {
    assert_eq!(
        topk_select(&[3.0, -1.0, 2.0, 0.5], 2).unwrap(),
        vec![3.0, 0.0, 2.0, 0.0]
    );
    assert_eq!(topk_select(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
    assert_eq!(topk_indices(&[0.0; 4], 2).unwrap(), vec![0, 1]);
    assert_eq!(topk_select(&[-1.0, -2.0, -3.0], 1).unwrap(), vec![-1.0, 0.0, 0.0]);
    assert!(topk_select(&[1.0, 2.0], 3).is_err());
}

#[test]
fn negative_retained_value_is_not_a_fixed_point() {
    // selection is by signed value, so the zeros left behind outrank -1
    let once = topk_select(&[-1.0, -2.0, -3.0], 1).unwrap();
    assert_eq!(once, vec![-1.0, 0.0, 0.0]);
    assert_eq!(topk_select(&once, 1).unwrap(), vec![0.0; 3]);
}

fn identity_params(d: usize, k: usize) -> SaeParams {
    let mut enc = vec![0.0; d * d];
    for i in 0..d {
        enc[i * d + i] = 1.0;
    }
    SaeParams::from_parts(d, d, k, enc, vec![0.0; d], vec![0.0; d], None).unwrap()
}

#[test]
fn encode_decode_examples() {
    let p = identity_params(3, 1);
    assert_eq!(p.encode(&[5.0, 1.0, 3.0]).unwrap(), vec![5.0, 0.0, 0.0]);
    assert_eq!(p.decode(&[0.0, 2.0, 0.0]).unwrap(), vec![0.0, 2.0, 0.0]);

    let r = random_params(3, 4, 8, 2, true);
    let centered = SaeParams::from_parts(
        4,
        8,
        2,
        r.enc_weight().to_vec(),
        vec![0.0; 8],
        r.dec_bias().to_vec(),
        None,
    )
    .unwrap();
    assert!(centered.encode(centered.dec_bias()).unwrap().iter().all(|&v| v == 0.0));
    assert_eq!(centered.decode(&[0.0; 8]).unwrap(), centered.dec_bias());
    assert!(r.encode(&[0.0; 3]).is_err());
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
    let p = random_params(9, 4, 8, 2, false);
    let rows = uniform(&mut rng(10), 12, -1.0, 1.0);
    let per_row: f64 = rows.chunks(4).map(|x| p.reconstruction_mse(x).unwrap()).sum::<f64>() / 3.0;
    assert!((batch_loss(&p, &rows).unwrap() - per_row).abs() < 1e-15);
}

/// A random gradient-check instance whose TopK selection survives every
/// perturbation of size `h`.
fn stable_instance(seed: u64, tied: bool) -> (SaeParams, Vec<f64>) {
    for attempt in 0.. {
        let s = seed * 1000 + attempt;
        let p = random_params(s, 8, 16, 3, tied);
        let rows = uniform(&mut rng(s ^ 0xabc), 4 * 8, -1.5, 1.5);
        if selection_margin(&p, &rows) > 1e-2 {
            return (p, rows);
        }
    }
    unreachable!()
}

fn check_gradients(tied: bool) {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (p, rows) = stable_instance(seed, tied);
        let g = gradients(&p, &rows).unwrap();
        let mut pairs = vec![
            (Tensor::EncWeight, g.enc_weight.clone()),
            (Tensor::EncBias, g.enc_bias.clone()),
            (Tensor::DecBias, g.dec_bias.clone()),
        ];
        if !tied {
            pairs.push((Tensor::DecRows, g.dec_rows.clone().unwrap()));
        }
        for (t, analytic) in pairs {
            let numeric = finite_difference(&p, &rows, t, h);
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                let e = relative_error(*a, *n);
                assert!(e < 1e-4, "seed {seed} {t:?}[{i}]: analytic {a}, numeric {n}, rel {e}");
                worst = worst.max(e);
            }
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn gradients_match_finite_differences_tied() {
    check_gradients(true);
}

#[test]
fn gradients_match_finite_differences_untied() {
    check_gradients(false);
}

#[test]
fn untied_decoder_gradient_is_scaled_outer_product() {
    let (d, l, b) = (6, 12, 5);
    let p = random_params(77, d, l, 3, false);
    let rows = uniform(&mut rng(78), b * d, -1.0, 1.0);
    let g = gradients(&p, &rows).unwrap().dec_weight().unwrap();
    let mut expected = vec![0.0; d * l];
    for x in rows.chunks(d) {
        let z = dense_encode(&p, x);
        let recon = dense_decode(&p, &z);
        for i in 0..d {
            for j in 0..l {
                expected[i * l + j] += (recon[i] - x[i]) * z[j] * 2.0 / d as f64 / b as f64;
            }
        }
    }
    for (a, e) in g.iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-12 * (1.0 + e.abs()), "{a} vs {e}");
    }
}

#[test]
fn perfect_reconstruction_has_zero_gradients() {
    // identity dictionary with k = d reconstructs every input exactly
    let p = identity_params(4, 4);
    let rows = uniform(&mut rng(5), 3 * 4, 0.1, 1.0);
    let pass = forward_backward(&p, &rows).unwrap();
    assert_eq!(pass.loss, 0.0);
    assert_eq!(pass.grads.max_abs(), 0.0);
}

#[test]
fn adam_single_scalar_step() {
    let cfg = AdamConfig {
        learning_rate: 0.1,
        ..AdamConfig::default()
    };
    let mut param = [1.0];
    let mut mom = Moments::zeros(1);
    adam_update(&cfg, 1, &mut param, &[1.0], &mut mom);
    // m_hat = 1, v_hat = 1: the step is lr / (1 + eps)
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((param[0] - expected).abs() < 1e-15);
    assert!((1.0 - param[0] - 0.1).abs() < 1e-8);
    assert!(mom.v[0] >= 0.0);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = random_params(4, 4, 8, 2, false);
    let before = p.clone();
    let mut state = AdamState::new(&p);
    adam_step(
        &mut p,
        &mut state,
        &Gradients::zeros_like(&before),
        &AdamConfig::default(),
    );
    assert_eq!(p, before);
}

#[test]
fn tied_decoder_stays_transpose_after_100_steps() {
    let mut p = random_params(31, 8, 32, 4, true);
    let mut state = AdamState::new(&p);
    let mut r = rng(32);
    for _ in 0..100 {
        let rows = uniform(&mut r, 16 * 8, -1.0, 1.0);
        let g = gradients(&p, &rows).unwrap();
        adam_step(&mut p, &mut state, &g, &AdamConfig::default());
    }
    let (d, l) = (p.d(), p.l());
    let dec = p.dec_weight();
    for j in 0..l {
        for i in 0..d {
            assert_eq!(dec[i * l + j].to_bits(), p.enc_weight()[j * d + i].to_bits());
        }
    }
}

fn toy_stream(seed: u64, d: usize, count: usize, batch: usize) -> BatchStream {
    let rows: Vec<f32> = uniform(&mut rng(seed), count * d, -1.0, 1.0)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let shard = ActivationShard::new(d, rows, (0..count as u64).collect(), vec![0; count]).unwrap();
    BatchStream::from_shards(Arc::from(vec![shard]), d, batch, seed, 64).unwrap()
}

#[test]
fn zero_steps_returns_initialization() {
    let cfg = TrainConfig {
        k: 2,
        expansion_factor: 2,
        steps: 0,
        ..TrainConfig::default()
    };
    let out = train(&mut toy_stream(1, 4, 50, 8), &cfg).unwrap();
    assert_eq!(out.params, SaeParams::init(4, 2, 2, true, 0).unwrap());
    assert!(out.history.is_empty());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    for tied in [true, false] {
        let cfg = TrainConfig {
            k: 2,
            expansion_factor: 4,
            tied,
            steps: 300,
            batch_size: 16,
            log_interval: 50,
            dead_window: 1000,
            learning_rate: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&mut toy_stream(2, 4, 200, 16), &cfg).unwrap();
        let b = train(&mut toy_stream(2, 4, 200, 16), &cfg).unwrap();
        assert_eq!(checkpoint_bytes(&a.params), checkpoint_bytes(&b.params));
        assert_eq!(a.history, b.history);
        let steps: Vec<u64> = a.history.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![1, 50, 100, 150, 200, 250, 300]);
        assert!(a.final_stats().unwrap().mse < a.history[0].mse);
        for s in &a.history {
            assert_eq!(s.dead_fraction, s.dead_count as f64 / a.params.l() as f64);
        }
    }
}

#[test]
fn train_rejects_bad_config_and_width() {
    let bad = TrainConfig {
        adam_beta1: 1.0,
        ..TrainConfig::default()
    };
    assert!(train(&mut toy_stream(1, 4, 10, 2), &bad).is_err());
    let mut p = SaeParams::init(5, 2, 2, true, 0).unwrap();
    let cfg = TrainConfig {
        k: 2,
        expansion_factor: 2,
        steps: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train_from(&mut p, &mut toy_stream(1, 4, 10, 2), &cfg),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn non_finite_loss_aborts() {
    let d = 2;
    let enc = vec![1e200, 0.0, 0.0, 1e200];
    let mut p = SaeParams::from_parts(d, 2, 1, enc, vec![0.0; 2], vec![0.0; 2], None).unwrap();
    let cfg = TrainConfig {
        k: 1,
        expansion_factor: 1,
        steps: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let err = train_from(&mut p, &mut toy_stream(4, d, 20, 4), &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 1, .. }), "{err}");
}

fn stats(selections: Vec<u64>, seen: u64) -> TrainStats {
    TrainStats {
        step: 1,
        examples_seen: seen,
        mse: 0.0,
        dead_count: 0,
        dead_fraction: 0.0,
        selections,
    }
}

#[test]
fn dead_latent_window() {
    let s = stats(vec![1000, 400, 0, 901], 1000);
    assert_eq!(dead_latents(&s, 100), vec![1, 2]);
    assert_eq!(dead_latents(&s, 99), vec![1, 2, 3]);
    assert_eq!(dead_latents(&s, 2000), Vec::<usize>::new());
}

#[test]
fn every_latent_alive_when_l_equals_k() {
    let cfg = TrainConfig {
        k: 4,
        expansion_factor: 1,
        steps: 20,
        batch_size: 8,
        dead_window: 8,
        log_interval: 20,
        ..TrainConfig::default()
    };
    let out = train(&mut toy_stream(6, 4, 100, 8), &cfg).unwrap();
    let last = out.final_stats().unwrap();
    assert!(dead_latents(last, cfg.dead_window).is_empty());
    assert_eq!(last.dead_count, 0);
}

#[test]
fn zero_row_with_very_negative_bias_is_always_dead() {
    let (d, l) = (4, 8);
    let mut p = random_params(12, d, l, 2, true);
    p.enc_weight_mut()[5 * d..6 * d].fill(0.0);
    p.enc_bias_mut()[5] = -1e12;
    let cfg = TrainConfig {
        k: 2,
        expansion_factor: 2,
        steps: 50,
        batch_size: 8,
        dead_window: 200,
        log_interval: 50,
        ..TrainConfig::default()
    };
    let history = train_from(&mut p, &mut toy_stream(13, d, 100, 8), &cfg).unwrap();
    let last = history.last().unwrap();
    assert_eq!(last.selections[5], 0);
    assert!(dead_latents(last, cfg.dead_window).contains(&5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), tied in any::<bool>(), d in 1usize..6, e in 1usize..4) {
        let l = d * e;
        let p = random_params(seed, d, l, 1, tied);
        let bytes = checkpoint_bytes(&p);
        let back = parse_checkpoint(&bytes, "x.ckpt".as_ref()).unwrap();
        prop_assert_eq!(checkpoint_bytes(&back), bytes.clone());
        let again = parse_checkpoint(&checkpoint_bytes(&back), "x.ckpt".as_ref()).unwrap();
        prop_assert_eq!(again, back);
    }
}

#[test]
fn checkpoint_layout_and_errors() {
    let p = random_params(1, 2, 4, 1, false);
    let bytes = checkpoint_bytes(&p);
    assert_eq!(&bytes[..8], b"SAECKPT1");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1);
    assert_eq!(bytes[20], 0);
    assert_eq!(bytes.len(), 21 + 4 * (8 + 4 + 2 + 8));
    let tied = checkpoint_bytes(&random_params(1, 2, 4, 1, true));
    assert_eq!(tied.len(), 21 + 4 * (8 + 4 + 2));

    let path = std::path::Path::new("c.ckpt");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(parse_checkpoint(&bad, path), Err(Error::BadMagic { .. })));
    assert!(matches!(
        parse_checkpoint(&bytes[..bytes.len() - 1], path),
        Err(Error::Truncated { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        parse_checkpoint(&long, path),
        Err(Error::TrailingBytes { .. })
    ));
    let mut nan = bytes.clone();
    nan[21..25].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(parse_checkpoint(&nan, path), Err(Error::NonFinite { .. })));

    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.ckpt");
    save_checkpoint(&f, &p).unwrap();
    assert_eq!(std::fs::read(&f).unwrap(), bytes);
    assert_eq!(checkpoint_bytes(&load_checkpoint(&f).unwrap()), bytes);
}
