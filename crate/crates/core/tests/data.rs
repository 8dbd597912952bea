mod common;

use std::collections::BTreeSet;

use image::RgbImage;
use noisypairs::pairing::{
    augment, plan_vts, sample_pair_vts, AugmentConfig, GeometricTransform, PairKind, PairSource, PairingMode,
    ViewSource,
};
use noisypairs::raster::{FloatImage, LabelMap};
use noisypairs::vts::{
    generate_sample, procedural_texture, write_procedural_textures, GeneratorConfig, Split, SplitTextures,
    TextureBank, TextureClass, DEFAULT_SPLIT_RATIOS,
};
use noisypairs::xbd::{binarize_label, classify, tile, undersample, undersample_counts, Noisiness, SourcePair};
use proptest::prelude::*;

fn label_strategy(max: u8) -> impl Strategy<Value = LabelMap> {
    (1usize..12, 1usize..12).prop_flat_map(move |(w, h)| {
        proptest::collection::vec(0..=max, w * h).prop_map(move |d| LabelMap::from_vec(w, h, d).unwrap())
    })
}

/// Largest `k ≤ n_noisy` keeping the noisy share at or below `r` with every
/// clean pair kept, or the largest clean count keeping it at or above `r`
/// with every noisy pair kept, found by trying every count.
fn brute_force_counts(n_clean: usize, n_noisy: usize, r: f64) -> (usize, usize) {
    let share = |c: usize, n: usize| n as f64 / (c + n) as f64;
    if r == 0.0 {
        return (n_clean, 0);
    }
    if r == 1.0 {
        return (0, n_noisy);
    }
    if r <= share(n_clean, n_noisy) {
        let k = (0..=n_noisy).filter(|&k| share(n_clean, k) <= r + 1e-12).max().unwrap();
        (n_clean, k)
    } else {
        let k = (0..=n_clean).filter(|&k| share(k, n_noisy) >= r - 1e-12).max().unwrap();
        (k, n_noisy)
    }
}

#[test]
fn undersampling_matches_full_scale_counts() {
    let (c, n) = (20446, 5224);
    assert_eq!(undersample_counts(c, n, 0.0).unwrap(), (20446, 0));
    assert_eq!(undersample_counts(c, n, 0.1).unwrap(), (20446, 2271));
    assert_eq!(undersample_counts(c, n, 0.7).unwrap(), (2238, 5224));
    assert_eq!(undersample_counts(c, n, 1.0).unwrap(), (0, 5224));
    for r in [0.0, 0.1, 0.7, 1.0] {
        assert_eq!(undersample_counts(c, n, r).unwrap(), brute_force_counts(c, n, r));
    }
}

#[test]
fn undersampling_rejects_impossible_rates() {
    assert!(undersample_counts(10, 0, 0.5).is_err());
    assert!(undersample_counts(0, 10, 0.5).is_err());
    assert!(undersample_counts(10, 10, 1.5).is_err());
    assert_eq!(undersample_counts(0, 10, 1.0).unwrap(), (0, 10));
}

#[test]
fn sampler_hits_the_requested_rate() {
    let mut rng = common::rng(7);
    let n = 10_000;
    let noisy = (0..n)
        .filter(|_| plan_vts(0.3, PairingMode::Noisy, &mut rng).unwrap().kind == PairKind::Noisy)
        .count();
    let frac = noisy as f64 / n as f64;
    assert!((0.28..=0.32).contains(&frac), "{frac}");
}

#[test]
fn sampler_boundaries() {
    let src = PairSource {
        id: "x".into(),
        first: FloatImage::zeros(3, 8, 8),
        second: FloatImage::from_rgb(&RgbImage::from_pixel(8, 8, image::Rgb([255, 255, 255]))),
        label: LabelMap::filled(8, 8, 1),
        noisy: false,
    };
    let mut rng = common::rng(0);
    let id = AugmentConfig::identity();
    for _ in 0..50 {
        let p = sample_pair_vts(&src, 0.0, PairingMode::Noisy, &id, &mut rng).unwrap();
        assert_eq!(p.plan.kind, PairKind::Clean);
        assert_eq!((&p.view_a, &p.view_b), (&src.first, &src.first));
        let p = sample_pair_vts(&src, 1.0, PairingMode::Noisy, &id, &mut rng).unwrap();
        assert_eq!((p.plan.a, p.plan.b), (ViewSource::First, ViewSource::Second));
        assert_eq!((&p.view_a, &p.view_b), (&src.first, &src.second));
        let p = sample_pair_vts(&src, 1.0, PairingMode::MereExposure, &id, &mut rng).unwrap();
        assert_eq!((&p.view_a, &p.view_b), (&src.second, &src.second));
    }
}

fn small_generator(dir: &std::path::Path, r_img: f64, seed: u64) -> (GeneratorConfig, SplitTextures) {
    write_procedural_textures(dir, 4, 48, 3).unwrap();
    let mut c = GeneratorConfig::desk(dir, r_img, seed);
    c.image_size = 32;
    let bank = TextureBank::from_dir(dir, DEFAULT_SPLIT_RATIOS, seed).unwrap();
    let tex = SplitTextures::load(&bank, dir, Split::Train).unwrap();
    (c, tex)
}

proptest! {
    #![proptest_config(common::cases(64))]

    #[test]
    fn binarization_is_idempotent(label in label_strategy(4)) {
        let once = binarize_label(&label).unwrap();
        prop_assert_eq!(binarize_label(&once).unwrap(), once.clone());
        for (a, b) in label.data().iter().zip(once.data()) {
            prop_assert_eq!(*b, u8::from(*a > 0));
        }
    }

    #[test]
    fn undersampling_matches_brute_force(c in 1usize..300, n in 1usize..300, r in 0.0f64..=1.0) {
        prop_assert_eq!(undersample_counts(c, n, r).unwrap(), brute_force_counts(c, n, r));
    }

    #[test]
    fn undersampling_keeps_the_share_within_one_pair(c in 1usize..300, n in 1usize..300, r in 0.01f64..0.99, seed in any::<u64>()) {
        let clean: Vec<usize> = (0..c).collect();
        let noisy: Vec<usize> = (1000..1000 + n).collect();
        let (kc, kn) = undersample(&clean, &noisy, r, seed).unwrap();
        let total = (kc.len() + kn.len()) as f64;
        prop_assert!((kn.len() as f64 - r * total).abs() <= 1.0 + 1e-9);
        prop_assert!(kc.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kn.iter().all(|v| noisy.contains(v)));
    }

    #[test]
    fn labels_commute_with_geometry(seed in any::<u64>(), w in 4usize..20, h in 4usize..20, out in 4usize..20) {
        let mut r = common::rng(seed);
        let data: Vec<u8> = (0..w * h).map(|i| ((i / 3 + i / (3 * w)) % 3) as u8).collect();
        let label = LabelMap::from_vec(w, h, data).unwrap();
        let mut img = FloatImage::zeros(1, h, w);
        for (v, l) in img.data.iter_mut().zip(label.data()) {
            *v = *l as f32;
        }
        let cfg = AugmentConfig { out_size: Some(out), ..AugmentConfig::default() };
        let t = GeometricTransform::sample(&cfg, w, h, &mut r);
        let warped = t.apply_image(&img);
        let warped_label = t.apply_label(&label);
        for v in 0..out {
            for u in 0..out {
                let (sx, sy) = t.source_coord(u, v);
                let tap = |x: f64, y: f64| {
                    let xi = (x.floor().max(0.0) as usize).min(w - 1);
                    let yi = (y.floor().max(0.0) as usize).min(h - 1);
                    label.get(xi, yi)
                };
                let taps = [
                    tap(sx - 0.5, sy - 0.5),
                    tap(sx + 0.5, sy - 0.5),
                    tap(sx - 0.5, sy + 0.5),
                    tap(sx + 0.5, sy + 0.5),
                ];
                // Away from class boundaries the warped image and the warped
                // label agree exactly.
                if taps.iter().all(|&c| c == taps[0]) {
                    prop_assert_eq!(warped_label.get(u, v), taps[0]);
                    prop_assert!((warped.data[v * out + u] - taps[0] as f32).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn flips_commute_exactly(seed in any::<u64>(), w in 2usize..16, h in 2usize..16) {
        let mut r = common::rng(seed);
        let data: Vec<u8> = (0..w * h).map(|_| r.random_range(0..3)).collect();
        let label = LabelMap::from_vec(w, h, data).unwrap();
        let mut img = FloatImage::zeros(1, h, w);
        for (v, l) in img.data.iter_mut().zip(label.data()) {
            *v = *l as f32;
        }
        let (a, b) = augment(&img, Some(&label), &AugmentConfig::flips_only(), &mut r);
        let b = b.unwrap();
        for (x, y) in a.data.iter().zip(b.data()) {
            prop_assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn tile_noisiness_matches_a_pixel_scan(seed in any::<u64>(), damaged in proptest::collection::vec(0usize..4, 0..4)) {
        let mut r = common::rng(seed);
        let n = 1024;
        let mut post = LabelMap::filled(n, n, 0);
        // One building per quadrant; quadrants listed in `damaged` get a
        // damage grade somewhere.
        for q in 0..4 {
            let (x0, y0) = ((q % 2) * 512, (q / 2) * 512);
            let grade = if damaged.contains(&q) { r.random_range(2..=4) } else { 1 };
            let (bx, by) = (x0 + r.random_range(0..500), y0 + r.random_range(0..500));
            for y in by..by + 8 {
                for x in bx..bx + 8 {
                    post.set(x, y, grade);
                }
            }
        }
        let img = RgbImage::new(n as u32, n as u32);
        let src = SourcePair {
            id: "s".into(),
            site: "site".into(),
            pre_image: img.clone(),
            post_image: img,
            pre_label: Some(binarize_label(&post).unwrap()),
            post_label: Some(post.clone()),
        };
        let tiles = tile(&src).unwrap();
        prop_assert_eq!(tiles.len(), 4);
        for t in &tiles {
            let (x0, y0) = ((t.quadrant % 2) * 512, (t.quadrant / 2) * 512);
            let mut any = false;
            for y in y0..y0 + 512 {
                for x in x0..x0 + 512 {
                    any |= post.get(x, y) >= 2;
                }
            }
            let want = if any { Noisiness::Noisy } else { Noisiness::Clean };
            prop_assert_eq!(t.noisiness, want);
            prop_assert_eq!(classify(&t.post_label), want);
            prop_assert_eq!(t.noisiness == Noisiness::Noisy, damaged.contains(&t.quadrant));
        }
    }
}

use rand::Rng;

proptest! {
    #![proptest_config(common::cases(12))]

    #[test]
    fn generated_samples_satisfy_every_invariant(seed in any::<u64>(), r_idx in 0usize..5) {
        let r_img = [0.0, 0.25, 0.5, 0.75, 1.0][r_idx];
        let dir = tempfile::tempdir().unwrap();
        let (config, tex) = small_generator(dir.path(), r_img, seed);
        for index in 0..3 {
            let (layout, s, m) = generate_sample(&config, &tex, Split::Train, index).unwrap();
            prop_assert!(layout.is_partition());
            prop_assert_eq!(layout.class_cell_counts(), [10, 10]);
            prop_assert_eq!(s.replaced_cells.len(), (r_img * 20.0).round() as usize);
            let n = config.image_size;
            for y in 0..n {
                for x in 0..n {
                    let replaced = s.replaced_cells.contains(&layout.cell_at(x, y));
                    let same_px = s.clean_image.get_pixel(x as u32, y as u32) == s.noisy_image.get_pixel(x as u32, y as u32);
                    if !replaced {
                        prop_assert!(same_px);
                        prop_assert_eq!(s.clean_label.get(x, y), s.noisy_label.get(x, y));
                    } else {
                        prop_assert_eq!(s.noisy_label.get(x, y), 2);
                    }
                    prop_assert_eq!(s.clean_label.get(x, y), layout.class_at(x, y));
                }
            }
            let (_, again, m2) = generate_sample(&config, &tex, Split::Train, index).unwrap();
            prop_assert_eq!(&again, &s);
            prop_assert_eq!(m2, m);
        }
    }
}

#[test]
fn procedural_textures_differ_between_classes() {
    let imgs: Vec<RgbImage> = TextureClass::ALL.iter().map(|&c| procedural_texture(c, 32, 1)).collect();
    let distinct: BTreeSet<Vec<u8>> = imgs.iter().map(|i| i.as_raw().clone()).collect();
    assert_eq!(distinct.len(), 3);
}
