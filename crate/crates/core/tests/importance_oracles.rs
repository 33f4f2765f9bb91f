//! Importance scores against direct evaluations of their definitions.

use hyred::importance::{attn_importance, ssm_importance, ssm_importance_with_decay};
use hyred::scan::ScanInputs;
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn normal2(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

#[test]
fn attention_matches_direct_softmax() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, kv, per_kv, hd) = (
            rng.random_range(1..6),
            rng.random_range(1..40),
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..9),
        );
        let heads = kv * per_kv;
        let q = normal3(&mut rng, (m, heads, hd));
        let k = normal3(&mut rng, (n, kv, hd));
        let map = attn_importance(0, q.view(), k.view()).unwrap();
        let mut expected = vec![0.0f64; n];
        for h in 0..heads {
            for t in 0..m {
                // exp without max subtraction: logits here are small
                let e: Vec<f64> = (0..n)
                    .map(|i| {
                        let s: f64 = (0..hd).map(|c| q[[t, h, c]] * k[[i, h / per_kv, c]]).sum();
                        (s / (hd as f64).sqrt()).exp()
                    })
                    .collect();
                let z: f64 = e.iter().sum();
                for i in 0..n {
                    expected[i] += e[i] / z / (heads * m) as f64;
                }
            }
        }
        for i in 0..n {
            assert!(
                (map.scores[i] - expected[i]).abs() < 1e-13,
                "seed {seed} token {i}"
            );
        }
        assert!((map.scores.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn decay_free_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, m, g, s) = (30, 5, 3, 6);
    let b = normal3(&mut rng, (n, g, s));
    let c = normal3(&mut rng, (m, g, s));
    let map = ssm_importance(2, b.view(), c.view()).unwrap();
    assert_eq!(map.layer_index, 2);
    for i in 0..n {
        let mut total = 0.0;
        for gi in 0..g {
            for t in 0..m {
                total += (0..s)
                    .map(|k| b[[i, gi, k]] * c[[t, gi, k]])
                    .sum::<f64>()
                    .abs();
            }
        }
        assert!((map.scores[i] - total / (g * m) as f64).abs() < 1e-12);
    }
}

/// `|prod_{u=j+1..t} a_u * b_j . c_t|` averaged over text rows.
fn with_decay_oracle(inputs: &ScanInputs<f64>, n: usize) -> Vec<f64> {
    let t_len = inputs.len();
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for t in n..t_len {
                let decay: f64 = (j + 1..=t).map(|u| inputs.a_bar[u]).product();
                acc += (decay * inputs.b_bar.row(j).dot(&inputs.c.row(t))).abs();
            }
            acc / (t_len - n) as f64
        })
        .collect()
}

#[test]
fn with_decay_matches_explicit_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t_len, n, s) = (60, 48, 4);
    let inputs = ScanInputs::new(
        normal2(&mut rng, (t_len, 2)),
        Array1::from_shape_simple_fn(t_len, || rng.random_range(0.5..1.0)),
        normal2(&mut rng, (t_len, s)),
        normal2(&mut rng, (t_len, s)),
    )
    .unwrap();
    let map = ssm_importance_with_decay(0, std::slice::from_ref(&inputs), n..t_len, 0..n).unwrap();
    for (i, want) in with_decay_oracle(&inputs, n).into_iter().enumerate() {
        assert!(
            (map.scores[i] - want).abs() <= 1e-12 * want.max(1.0),
            "token {i}"
        );
    }
}

#[test]
fn near_unit_decay_approaches_decay_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (t_len, n, s) = (25, 20, 3);
    let b = normal2(&mut rng, (t_len, s));
    let c = normal2(&mut rng, (t_len, s));
    let inputs = ScanInputs::new(
        normal2(&mut rng, (t_len, 1)),
        Array1::from_elem(t_len, 1.0 - 1e-12),
        b.clone(),
        c.clone(),
    )
    .unwrap();
    let with = ssm_importance_with_decay(0, &[inputs], n..t_len, 0..n).unwrap();
    let b3 = b
        .slice(ndarray::s![..n, ..])
        .to_owned()
        .insert_axis(ndarray::Axis(1));
    let c3 = c
        .slice(ndarray::s![n.., ..])
        .to_owned()
        .insert_axis(ndarray::Axis(1));
    let free = ssm_importance(0, b3.view(), c3.view()).unwrap();
    for i in 0..n {
        assert!((with.scores[i] - free.scores[i]).abs() <= 1e-9 * free.scores[i]);
    }
}
