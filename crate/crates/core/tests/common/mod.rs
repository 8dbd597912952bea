//! Naive reference implementations and random instance builders shared by
//! the integration tests.
#![allow(dead_code)]

use noisypairs::losses::{DenseLabelGrid, FeatureMap};
use proptest::test_runner::Config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cases(n: u32) -> Config {
    Config {
        cases: n,
        failure_persistence: None,
        ..Config::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * dim);
    while out.len() < n * dim {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.1 {
            out.extend(v.iter().map(|x| (x / norm) as f32));
        }
    }
    out
}

pub struct DenseInstance {
    pub d: usize,
    pub dim: usize,
    pub f: Vec<Vec<f32>>,
    pub y: Vec<Vec<u8>>,
}

impl DenseInstance {
    /// `maps` feature maps of `d×d` unit vectors with labels from `classes`.
    pub fn random(seed: u64, maps: usize, classes: u8) -> Self {
        let mut r = rng(seed);
        let d = r.random_range(1..=4);
        let dim = r.random_range(1..=8);
        let f = (0..maps).map(|_| unit_vectors(&mut r, d * d, dim)).collect();
        let y = (0..maps)
            .map(|_| (0..d * d).map(|_| r.random_range(0..classes)).collect())
            .collect();
        DenseInstance { d, dim, f, y }
    }

    pub fn map(&self, i: usize) -> FeatureMap {
        FeatureMap::new_unchecked(self.d, self.dim, self.f[i].clone()).unwrap()
    }

    pub fn labels(&self, i: usize) -> DenseLabelGrid {
        DenseLabelGrid::new(self.d, self.y[i].clone()).unwrap()
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn vec_at(f: &[f32], dim: usize, p: usize) -> &[f32] {
    &f[p * dim..(p + 1) * dim]
}

/// The within-image loss written as the literal double sum, with anchors
/// lacking any positive left out of the average.
pub fn naive_within(fi: &[f32], fih: &[f32], yi: &[u8], yih: &[u8], dim: usize, tau: f64) -> f64 {
    let n = yi.len();
    let mut total = 0.0;
    let mut active = 0;
    for p in 0..n {
        let a = vec_at(fi, dim, p);
        let n_pos = (0..n).filter(|&q| yih[q] == yi[p]).count();
        if n_pos == 0 {
            continue;
        }
        active += 1;
        let mut denom = 0.0;
        for k in 0..n {
            denom += (dot(a, vec_at(fih, dim, k)) / tau).exp();
        }
        let mut term = 0.0;
        for q in 0..n {
            if yih[q] == yi[p] {
                let e = (dot(a, vec_at(fih, dim, q)) / tau).exp();
                term += (e / denom).ln();
            }
        }
        total += -term / n_pos as f64;
    }
    if active == 0 {
        0.0
    } else {
        total / active as f64
    }
}

/// The cross-image loss as its two literal double sums over Î and Ĵ.
#[allow(clippy::too_many_arguments)]
pub fn naive_cross(
    fi: &[f32],
    fih: &[f32],
    fjh: &[f32],
    yi: &[u8],
    yih: &[u8],
    yjh: &[u8],
    dim: usize,
    tau: f64,
) -> f64 {
    let n = yi.len();
    let mut total = 0.0;
    let mut active = 0;
    for p in 0..n {
        let a = vec_at(fi, dim, p);
        let n_i = (0..n).filter(|&q| yih[q] == yi[p]).count();
        let n_j = (0..n).filter(|&q| yjh[q] == yi[p]).count();
        if n_i + n_j == 0 {
            continue;
        }
        active += 1;
        let mut denom = 0.0;
        for k in 0..n {
            denom += (dot(a, vec_at(fih, dim, k)) / tau).exp();
        }
        for k in 0..n {
            if yjh[k] == yi[p] {
                denom += (dot(a, vec_at(fjh, dim, k)) / tau).exp();
            }
        }
        let w = 1.0 / (n_i + n_j) as f64;
        for q in 0..n {
            if yih[q] == yi[p] {
                total -= w * ((dot(a, vec_at(fih, dim, q)) / tau).exp() / denom).ln();
            }
        }
        for q in 0..n {
            if yjh[q] == yi[p] {
                total -= w * ((dot(a, vec_at(fjh, dim, q)) / tau).exp() / denom).ln();
            }
        }
    }
    if active == 0 {
        0.0
    } else {
        total / active as f64
    }
}

/// InfoNCE from its definition, without max shifting.
pub fn naive_info_nce(q: &[f32], k_plus: &[f32], negatives: &[f32], tau: f64) -> f64 {
    let dim = q.len();
    let pos = (dot(q, k_plus) / tau).exp();
    let mut denom = pos;
    for k in negatives.chunks(dim) {
        denom += (dot(q, k) / tau).exp();
    }
    -(pos / denom).ln()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff(x: &[f32], h: f64, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        let orig = buf[i];
        let (hi, lo) = ((orig as f64 + h) as f32, (orig as f64 - h) as f32);
        buf[i] = hi;
        let up = f(&buf);
        buf[i] = lo;
        let down = f(&buf);
        buf[i] = orig;
        g.push((up - down) / (hi as f64 - lo as f64));
    }
    g
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with a small floor so an all-zero gradient
/// compares absolutely.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-4)
}
