use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::derive_seed;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.7;

fn site_key(site: &str) -> u64 {
    // FNV-1a, stable across runs and platforms.
    site.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Per-site shuffled split; each site contributes `round(n · ratio)` items to
/// train. Returns sorted index lists into `items`.
pub fn split_train_val<T>(
    items: &[T],
    site_of: impl Fn(&T) -> &str,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("train ratio {ratio} outside [0, 1]")));
    }
    let mut by_site: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_site.entry(site_of(item)).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (site, mut idx) in by_site {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[site_key(site)]));
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * ratio).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// How many clean and noisy pairs survive undersampling to `r_pairs`.
pub fn undersample_counts(n_clean: usize, n_noisy: usize, r_pairs: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&r_pairs) {
        return Err(Error::InvalidArgument(format!("r_pairs {r_pairs} outside [0, 1]")));
    }
    if r_pairs > 0.0 && n_noisy == 0 {
        return Err(Error::InvalidArgument(format!("r_pairs {r_pairs} needs noisy pairs, none given")));
    }
    if r_pairs < 1.0 && n_clean == 0 {
        return Err(Error::InvalidArgument(format!("r_pairs {r_pairs} needs clean pairs, none given")));
    }
    if r_pairs == 0.0 {
        return Ok((n_clean, 0));
    }
    if r_pairs == 1.0 {
        return Ok((0, n_noisy));
    }
    let floor = |x: f64| (x + 1e-9 * x.max(1.0)).floor() as usize;
    let current = n_noisy as f64 / (n_noisy + n_clean) as f64;
    if r_pairs <= current {
        let k = floor(n_clean as f64 * r_pairs / (1.0 - r_pairs));
        Ok((n_clean, k.min(n_noisy)))
    } else {
        let k = floor(n_noisy as f64 * (1.0 - r_pairs) / r_pairs);
        Ok((k.min(n_clean), n_noisy))
    }
}

/// Undersamples without replacement; the survivors keep their input order.
pub fn undersample<T: Clone>(clean: &[T], noisy: &[T], r_pairs: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (kc, kn) = undersample_counts(clean.len(), noisy.len(), r_pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |items: &[T], k: usize| -> Vec<T> {
        let mut idx = index::sample(&mut rng, items.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| items[i].clone()).collect()
    };
    let c = pick(clean, kc);
    let n = pick(noisy, kn);
    Ok((c, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_pairs_at_one_site_split_seven_three() {
        let items = vec!["a"; 10];
        let (t, v) = split_train_val(&items, |s| s, 0.7, 1).unwrap();
        assert_eq!((t.len(), v.len()), (7, 3));
        assert_eq!(split_train_val(&items, |s| s, 0.7, 1).unwrap().0, t);
    }

    #[test]
    fn full_scale_counts() {
        assert_eq!(undersample_counts(20446, 5224, 0.1).unwrap(), (20446, 2271));
        assert_eq!(undersample_counts(20446, 5224, 0.7).unwrap(), (2238, 5224));
        assert_eq!(undersample_counts(20446, 5224, 1.0).unwrap(), (0, 5224));
        assert_eq!(undersample_counts(20446, 5224, 0.0).unwrap(), (20446, 0));
    }

    #[test]
    fn empty_lists_are_errors() {
        assert!(undersample_counts(10, 0, 0.2).is_err());
        assert!(undersample_counts(0, 10, 0.2).is_err());
        assert!(undersample_counts(0, 10, 1.0).is_ok());
        assert!(undersample_counts(10, 0, 0.0).is_ok());
        assert!(undersample_counts(10, 10, 1.5).is_err());
    }

    #[test]
    fn undersampling_never_duplicates() {
        let clean: Vec<u32> = (0..50).collect();
        let noisy: Vec<u32> = (100..120).collect();
        let (c, n) = undersample(&clean, &noisy, 0.1, 3).unwrap();
        assert_eq!(c, clean);
        assert_eq!(n.len(), 5);
        assert!(n.windows(2).all(|w| w[0] < w[1]));
    }
}
