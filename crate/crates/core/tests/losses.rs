mod common;

use common::{finite_diff, naive_cross, naive_info_nce, naive_within, rel_err, unit_vectors, DenseInstance};
use noisypairs::losses::{
    cross_image_grad, cross_image_loss, dense_batch, info_nce, info_nce_grad, within_image_grad, within_image_loss,
    DenseKind, DenseLabelGrid, FeatureMap, KeyQueue,
};
use proptest::prelude::*;

#[test]
fn info_nce_uniform_case_is_log_k_plus_one() {
    for k in [0usize, 7, 1023] {
        let q = [1.0f32, 0.0, 0.0];
        let negatives: Vec<f32> = std::iter::repeat_n(q, k).flatten().collect();
        let loss = info_nce(&q, &q, &negatives, 0.07).unwrap();
        assert!((loss - ((k + 1) as f64).ln()).abs() < 1e-6, "K={k}: {loss}");
    }
}

#[test]
fn info_nce_rejects_bad_input() {
    let q = [1.0f32, 0.0];
    assert!(info_nce(&q, &q, &[], 0.0).is_err());
    assert!(info_nce(&q, &[1.0, 0.0, 0.0], &[], 0.1).is_err());
    assert!(info_nce(&[2.0, 0.0], &q, &[], 0.1).is_err());
    assert!(info_nce(&q, &q, &[0.5, 0.5], 0.1).is_err());
}

#[test]
fn info_nce_scalar_case() {
    // q = k+ = 1, one negative at -1, τ = 1: ln(1 + e^-2)
    let l = info_nce(&[1.0], &[1.0], &[-1.0], 1.0).unwrap();
    assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn within_identical_single_class_is_log_d_squared() {
    for d in [2usize, 8] {
        let n = d * d;
        let f = FeatureMap::new(d, 4, [0.5f32, 0.5, 0.5, 0.5].repeat(n)).unwrap();
        let y = DenseLabelGrid::new(d, vec![1; n]).unwrap();
        let l = within_image_loss(&f, &f, &y, &y, 0.3).unwrap();
        assert!((l - (n as f64).ln()).abs() < 1e-6, "d={d}: {l}");
    }
}

#[test]
fn absent_anchor_classes_give_zero() {
    let f = FeatureMap::new(2, 1, vec![1.0; 4]).unwrap();
    let a = DenseLabelGrid::new(2, vec![0; 4]).unwrap();
    let b = DenseLabelGrid::new(2, vec![1; 4]).unwrap();
    let g = within_image_grad(&f, &f, &a, &b, 0.5).unwrap();
    assert_eq!(g.loss, 0.0);
    assert_eq!(g.active_anchors, 0);
    assert!(g.d_anchor.iter().all(|v| *v == 0.0));
}

#[test]
fn queue_starts_as_random_unit_vectors() {
    let q = KeyQueue::random(16, 5, &mut common::rng(0));
    for k in q.as_slice().chunks(5) {
        let n: f32 = k.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

proptest! {
    #![proptest_config(common::cases(200))]

    #[test]
    fn within_matches_nested_loops(seed in any::<u64>(), tau in 0.05f64..2.0) {
        let x = DenseInstance::random(seed, 2, 3);
        let fast = within_image_loss(&x.map(0), &x.map(1), &x.labels(0), &x.labels(1), tau).unwrap();
        let slow = naive_within(&x.f[0], &x.f[1], &x.y[0], &x.y[1], x.dim, tau);
        prop_assert!((fast - slow).abs() < 1e-5, "{fast} vs {slow}");
    }

    #[test]
    fn cross_matches_nested_loops(seed in any::<u64>(), tau in 0.05f64..2.0) {
        let x = DenseInstance::random(seed, 3, 3);
        let fast = cross_image_loss(
            &x.map(0), &x.map(1), &x.map(2), &x.labels(0), &x.labels(1), &x.labels(2), tau,
        ).unwrap();
        let slow = naive_cross(&x.f[0], &x.f[1], &x.f[2], &x.y[0], &x.y[1], &x.y[2], x.dim, tau);
        prop_assert!((fast - slow).abs() < 1e-5, "{fast} vs {slow}");
    }

    #[test]
    fn info_nce_matches_definition(seed in any::<u64>(), k in 0usize..40, dim in 1usize..9, tau in 0.1f64..2.0) {
        let mut r = common::rng(seed);
        let q = unit_vectors(&mut r, 1, dim);
        let kp = unit_vectors(&mut r, 1, dim);
        let neg = unit_vectors(&mut r, k, dim);
        let fast = info_nce(&q, &kp, &neg, tau).unwrap();
        prop_assert!((fast - naive_info_nce(&q, &kp, &neg, tau)).abs() < 1e-9);
    }

    #[test]
    fn disjoint_third_image_reduces_cross_to_within(seed in any::<u64>(), tau in 0.05f64..2.0) {
        let mut x = DenseInstance::random(seed, 3, 2);
        // Ĵ only carries a class that never occurs in I.
        x.y[2] = vec![7; x.d * x.d];
        let cross = cross_image_loss(
            &x.map(0), &x.map(1), &x.map(2), &x.labels(0), &x.labels(1), &x.labels(2), tau,
        ).unwrap();
        let within = within_image_loss(&x.map(0), &x.map(1), &x.labels(0), &x.labels(1), tau).unwrap();
        prop_assert!((cross - within).abs() < 1e-6);
    }

    #[test]
    fn joint_pixel_permutation_leaves_losses_unchanged(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let x = DenseInstance::random(seed, 3, 3);
        let n = x.d * x.d;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(perm_seed));
        let mut y = DenseInstance { d: x.d, dim: x.dim, f: x.f.clone(), y: x.y.clone() };
        for m in 0..3 {
            for (to, &from) in perm.iter().enumerate() {
                y.f[m][to * x.dim..(to + 1) * x.dim].copy_from_slice(&x.f[m][from * x.dim..(from + 1) * x.dim]);
                y.y[m][to] = x.y[m][from];
            }
        }
        let tau = 0.3;
        let w0 = within_image_loss(&x.map(0), &x.map(1), &x.labels(0), &x.labels(1), tau).unwrap();
        let w1 = within_image_loss(&y.map(0), &y.map(1), &y.labels(0), &y.labels(1), tau).unwrap();
        prop_assert!((w0 - w1).abs() < 1e-9);
        let c0 = cross_image_loss(&x.map(0), &x.map(1), &x.map(2), &x.labels(0), &x.labels(1), &x.labels(2), tau).unwrap();
        let c1 = cross_image_loss(&y.map(0), &y.map(1), &y.map(2), &y.labels(0), &y.labels(1), &y.labels(2), tau).unwrap();
        prop_assert!((c0 - c1).abs() < 1e-9);
    }

    #[test]
    fn queue_is_fifo(cap in 1usize..12, dim in 1usize..4, pushes in proptest::collection::vec(1usize..6, 1..8)) {
        let mut q = KeyQueue::random(cap, dim, &mut common::rng(1));
        let mut model: std::collections::VecDeque<Vec<f32>> = q.fifo().chunks(dim).map(|c| c.to_vec()).collect();
        let mut next = 0f32;
        for n in pushes {
            let n = n.min(cap);
            let keys: Vec<f32> = (0..n * dim).map(|_| { next += 1.0; next }).collect();
            q.enqueue(&keys).unwrap();
            for k in keys.chunks(dim) {
                model.pop_front();
                model.push_back(k.to_vec());
            }
            let flat: Vec<f32> = model.iter().flatten().copied().collect();
            prop_assert_eq!(q.fifo(), flat);
            let mut stored: Vec<Vec<f32>> = q.as_slice().chunks(dim).map(|c| c.to_vec()).collect();
            let mut expected: Vec<Vec<f32>> = model.iter().cloned().collect();
            stored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(stored, expected);
        }
    }
}

proptest! {
    #![proptest_config(common::cases(20))]

    #[test]
    fn info_nce_gradient_matches_finite_differences(seed in any::<u64>(), tau in 0.2f64..1.0) {
        let mut r = common::rng(seed);
        let dim = 4;
        let q = unit_vectors(&mut r, 1, dim);
        let kp = unit_vectors(&mut r, 1, dim);
        let neg = unit_vectors(&mut r, 5, dim);
        let g = info_nce_grad(&q, &kp, &neg, tau);
        let h = 1e-3;
        let dq = finite_diff(&q, h, |v| info_nce_grad(v, &kp, &neg, tau).loss);
        let dk = finite_diff(&kp, h, |v| info_nce_grad(&q, v, &neg, tau).loss);
        let dn = finite_diff(&neg, h, |v| info_nce_grad(&q, &kp, v, tau).loss);
        prop_assert!(rel_err(&g.d_q, &dq) < 1e-3);
        prop_assert!(rel_err(&g.d_k_plus, &dk) < 1e-3);
        prop_assert!(rel_err(&g.d_negatives, &dn) < 1e-3);
    }

    #[test]
    fn within_gradient_matches_finite_differences(seed in any::<u64>(), tau in 0.2f64..1.0) {
        let x = DenseInstance::random(seed, 2, 2);
        let (d, c) = (x.d, x.dim);
        let (y0, y1) = (x.labels(0), x.labels(1));
        let loss = |a: &[f32], b: &[f32]| {
            within_image_loss(
                &FeatureMap::new_unchecked(d, c, a.to_vec()).unwrap(),
                &FeatureMap::new_unchecked(d, c, b.to_vec()).unwrap(),
                &y0, &y1, tau,
            ).unwrap()
        };
        let g = within_image_grad(&x.map(0), &x.map(1), &y0, &y1, tau).unwrap();
        let da = finite_diff(&x.f[0], 1e-3, |v| loss(v, &x.f[1]));
        let db = finite_diff(&x.f[1], 1e-3, |v| loss(&x.f[0], v));
        prop_assert!(rel_err(&g.d_anchor, &da) < 1e-3, "{:?} vs {:?}", g.d_anchor, da);
        prop_assert!(rel_err(&g.d_keys[0], &db) < 1e-3);
    }

    #[test]
    fn cross_gradient_matches_finite_differences(seed in any::<u64>(), tau in 0.2f64..1.0) {
        let x = DenseInstance::random(seed, 3, 2);
        let (d, c) = (x.d, x.dim);
        let (y0, y1, y2) = (x.labels(0), x.labels(1), x.labels(2));
        let fm = |v: &[f32]| FeatureMap::new_unchecked(d, c, v.to_vec()).unwrap();
        let g = cross_image_grad(&x.map(0), &x.map(1), &x.map(2), &y0, &y1, &y2, tau).unwrap();
        let da = finite_diff(&x.f[0], 1e-3, |v| {
            cross_image_loss(&fm(v), &x.map(1), &x.map(2), &y0, &y1, &y2, tau).unwrap()
        });
        let db = finite_diff(&x.f[1], 1e-3, |v| {
            cross_image_loss(&x.map(0), &fm(v), &x.map(2), &y0, &y1, &y2, tau).unwrap()
        });
        let dj = finite_diff(&x.f[2], 1e-3, |v| {
            cross_image_loss(&x.map(0), &x.map(1), &fm(v), &y0, &y1, &y2, tau).unwrap()
        });
        prop_assert!(rel_err(&g.d_anchor, &da) < 1e-3);
        prop_assert!(rel_err(&g.d_keys[0], &db) < 1e-3);
        prop_assert!(rel_err(&g.d_keys[1], &dj) < 1e-3);
    }

    #[test]
    fn batch_loss_is_the_mean_of_per_pair_losses(seed in any::<u64>()) {
        let b = 3;
        let x = DenseInstance::random(seed, 2 * b, 3);
        let views_a: Vec<FeatureMap> = (0..b).map(|i| x.map(i)).collect();
        let views_b: Vec<FeatureMap> = (0..b).map(|i| x.map(b + i)).collect();
        let labels_a: Vec<DenseLabelGrid> = (0..b).map(|i| x.labels(i)).collect();
        let labels_b: Vec<DenseLabelGrid> = (0..b).map(|i| x.labels(b + i)).collect();
        let (loss, _, _) = dense_batch(DenseKind::Cross, &views_a, &views_b, &labels_a, &labels_b, 0.5).unwrap();
        let mean = (0..b)
            .map(|i| {
                let j = (i + 1) % b;
                cross_image_loss(&views_a[i], &views_b[i], &views_b[j], &labels_a[i], &labels_b[i], &labels_b[j], 0.5)
                    .unwrap()
            })
            .sum::<f64>()
            / b as f64;
        prop_assert!((loss - mean).abs() < 1e-9);
    }
}
