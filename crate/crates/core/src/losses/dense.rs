//! Supervised pixel-level contrastive losses over d×d feature grids.

use noisypairs_nn::{l2_normalize, Mode, ResNetEncoder, Tensor};

use super::info_nce::{check_tau, dot, log_sum_exp};
use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Norm tolerance for feature vectors entering a dense loss.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-4;

/// A d×d grid of c-dimensional feature vectors, position-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    d: usize,
    c: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Requires every vector to be unit length.
    pub fn new(d: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        let f = Self::new_unchecked(d, c, data)?;
        for p in 0..d * d {
            let n = dot(f.vector(p), f.vector(p)).sqrt();
            if (n - 1.0).abs() > FEATURE_NORM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("feature {p} has norm {n}")));
            }
        }
        Ok(f)
    }

    /// Skips the unit-norm check; for gradient checks and tests.
    pub fn new_unchecked(d: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != d * d * c || d == 0 || c == 0 {
            return Err(Error::Shape(format!("{} values for a {d}x{d}x{c} feature map", data.len())));
        }
        Ok(FeatureMap { d, c, data })
    }

    /// Normalises each position of sample `n` of an NCHW tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        if h != w {
            return Err(Error::Shape(format!("non-square feature grid {h}x{w}")));
        }
        let s = t.sample(n);
        let mut data = vec![0f32; h * w * c];
        for p in 0..h * w {
            let norm = (0..c).map(|k| s[k * h * w + p].powi(2)).sum::<f32>().sqrt().max(1e-12);
            for k in 0..c {
                data[p * c + k] = s[k * h * w + p] / norm;
            }
        }
        Ok(FeatureMap { d: h, c, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.c
    }

    pub fn n(&self) -> usize {
        self.d * self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, p: usize) -> &[f32] {
        &self.data[p * self.c..(p + 1) * self.c]
    }
}

/// A d×d grid of class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseLabelGrid {
    d: usize,
    data: Vec<u8>,
}

impl DenseLabelGrid {
    pub fn new(d: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::Shape(format!("{} labels for a {d}x{d} grid", data.len())));
        }
        Ok(DenseLabelGrid { d, data })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }
}

/// Majority class of each block; ties go to the lowest class index.
pub fn downsample_label(label: &LabelMap, d: usize) -> Result<DenseLabelGrid> {
    let (w, h) = (label.width(), label.height());
    if d == 0 || w % d != 0 || h % d != 0 {
        return Err(Error::Shape(format!("{w}x{h} label is not divisible into a {d}x{d} grid")));
    }
    let (bw, bh) = (w / d, h / d);
    let mut out = Vec::with_capacity(d * d);
    let mut hist = [0u32; 256];
    for gy in 0..d {
        for gx in 0..d {
            hist.fill(0);
            for y in gy * bh..(gy + 1) * bh {
                for x in gx * bw..(gx + 1) * bw {
                    hist[label.get(x, y) as usize] += 1;
                }
            }
            // max_by_key keeps the last maximum, so scan in reverse.
            let best = (0..256).rev().max_by_key(|&v| hist[v]).unwrap_or(0);
            out.push(best as u8);
        }
    }
    DenseLabelGrid::new(d, out)
}

/// One set of keys: a feature map, its labels, and whether every pixel enters
/// the denominator (`true`) or only pixels of the anchor's class.
pub struct KeySet<'a> {
    pub features: &'a FeatureMap,
    pub labels: &'a DenseLabelGrid,
    pub all_in_denominator: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub loss: f64,
    /// Anchors contributing to the average.
    pub active_anchors: usize,
    pub d_anchor: Vec<f64>,
    pub d_keys: Vec<Vec<f64>>,
}

/// Shared core of both dense losses. For each anchor `p` of class `y`, the
/// positives are all keys of class `y` (`N` of them); the loss term is
/// `LSE(denominator) − mean(positive logits)`. Anchors with `N = 0` are
/// skipped and excluded from the average.
pub fn dense_contrastive(
    anchor: &FeatureMap,
    anchor_labels: &DenseLabelGrid,
    keys: &[KeySet<'_>],
    tau: f64,
) -> Result<DenseGrad> {
    check_tau(tau)?;
    let c = anchor.c;
    if anchor_labels.d != anchor.d {
        return Err(Error::Shape(format!("{}x{0} labels for a {}x{1} map", anchor_labels.d, anchor.d)));
    }
    for k in keys {
        if k.features.c != c || k.features.d != anchor.d || k.labels.d != anchor.d {
            return Err(Error::Shape("key grid does not match the anchor grid".into()));
        }
    }
    let mut d_anchor = vec![0f64; anchor.data.len()];
    let mut d_keys: Vec<Vec<f64>> = keys.iter().map(|k| vec![0f64; k.features.data.len()]).collect();
    let mut total = 0.0;
    let mut active = 0usize;
    // Per-anchor scratch: (key set, key index, logit, is positive).
    let mut entries: Vec<(usize, usize, f64, bool)> = Vec::new();
    let mut weights: Vec<(usize, usize, f64)> = Vec::new();
    for p in 0..anchor.n() {
        let y = anchor_labels.data[p];
        let a = anchor.vector(p);
        entries.clear();
        for (s, k) in keys.iter().enumerate() {
            for q in 0..k.features.n() {
                let same = k.labels.data[q] == y;
                if same || k.all_in_denominator {
                    entries.push((s, q, dot(a, k.features.vector(q)) / tau, same));
                }
            }
        }
        let n_pos = entries.iter().filter(|e| e.3).count();
        if n_pos == 0 {
            continue;
        }
        active += 1;
        let logits: Vec<f64> = entries.iter().map(|e| e.2).collect();
        let lse = log_sum_exp(&logits);
        let mean_pos = entries.iter().filter(|e| e.3).map(|e| e.2).sum::<f64>() / n_pos as f64;
        total += lse - mean_pos;
        weights.clear();
        for &(s, q, logit, pos) in &entries {
            let g = (logit - lse).exp() - if pos { 1.0 / n_pos as f64 } else { 0.0 };
            weights.push((s, q, g));
        }
        for &(s, q, g) in &weights {
            let kv = keys[s].features.vector(q);
            let da = &mut d_anchor[p * c..(p + 1) * c];
            let dk = &mut d_keys[s][q * c..(q + 1) * c];
            for j in 0..c {
                da[j] += g * kv[j] as f64 / tau;
                dk[j] += g * a[j] as f64 / tau;
            }
        }
    }
    if active > 0 {
        let inv = 1.0 / active as f64;
        total *= inv;
        d_anchor.iter_mut().for_each(|v| *v *= inv);
        d_keys.iter_mut().flatten().for_each(|v| *v *= inv);
    }
    Ok(DenseGrad {
        loss: total,
        active_anchors: active,
        d_anchor,
        d_keys,
    })
}

pub fn within_image_grad(
    f_i: &FeatureMap,
    f_i_hat: &FeatureMap,
    y_i: &DenseLabelGrid,
    y_i_hat: &DenseLabelGrid,
    tau: f64,
) -> Result<DenseGrad> {
    let keys = [KeySet {
        features: f_i_hat,
        labels: y_i_hat,
        all_in_denominator: true,
    }];
    dense_contrastive(f_i, y_i, &keys, tau)
}

/// Pixels of I against same-class pixels of its augmentation Î.
pub fn within_image_loss(
    f_i: &FeatureMap,
    f_i_hat: &FeatureMap,
    y_i: &DenseLabelGrid,
    y_i_hat: &DenseLabelGrid,
    tau: f64,
) -> Result<f64> {
    Ok(within_image_grad(f_i, f_i_hat, y_i, y_i_hat, tau)?.loss)
}

#[allow(clippy::too_many_arguments)]
pub fn cross_image_grad(
    f_i: &FeatureMap,
    f_i_hat: &FeatureMap,
    f_j_hat: &FeatureMap,
    y_i: &DenseLabelGrid,
    y_i_hat: &DenseLabelGrid,
    y_j_hat: &DenseLabelGrid,
    tau: f64,
) -> Result<DenseGrad> {
    let keys = [
        KeySet {
            features: f_i_hat,
            labels: y_i_hat,
            all_in_denominator: true,
        },
        KeySet {
            features: f_j_hat,
            labels: y_j_hat,
            all_in_denominator: false,
        },
    ];
    dense_contrastive(f_i, y_i, &keys, tau)
}

/// The within-image loss with extra positives from a second image Ĵ.
pub fn cross_image_loss(
    f_i: &FeatureMap,
    f_i_hat: &FeatureMap,
    f_j_hat: &FeatureMap,
    y_i: &DenseLabelGrid,
    y_i_hat: &DenseLabelGrid,
    y_j_hat: &DenseLabelGrid,
    tau: f64,
) -> Result<f64> {
    Ok(cross_image_grad(f_i, f_i_hat, f_j_hat, y_i, y_i_hat, y_j_hat, tau)?.loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseKind {
    Within,
    Cross,
}

/// Batch objective: pair `i` uses view a as anchors and view b as keys; the
/// cross-image loss takes Ĵ from view b of pair `(i + 1) mod B`. Returns the
/// mean loss and gradients for both views, position-major per sample.
pub fn dense_batch(
    kind: DenseKind,
    views_a: &[FeatureMap],
    views_b: &[FeatureMap],
    labels_a: &[DenseLabelGrid],
    labels_b: &[DenseLabelGrid],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = views_a.len();
    if b == 0 || views_b.len() != b || labels_a.len() != b || labels_b.len() != b {
        return Err(Error::Shape(format!(
            "batch of {} / {} views and {} / {} labels",
            b,
            views_b.len(),
            labels_a.len(),
            labels_b.len()
        )));
    }
    let mut grad_a: Vec<Vec<f64>> = views_a.iter().map(|f| vec![0.0; f.data.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = views_b.iter().map(|f| vec![0.0; f.data.len()]).collect();
    let mut total = 0.0;
    for i in 0..b {
        let j = (i + 1) % b;
        let g = match kind {
            DenseKind::Within => within_image_grad(&views_a[i], &views_b[i], &labels_a[i], &labels_b[i], tau)?,
            DenseKind::Cross => cross_image_grad(
                &views_a[i],
                &views_b[i],
                &views_b[j],
                &labels_a[i],
                &labels_b[i],
                &labels_b[j],
                tau,
            )?,
        };
        total += g.loss;
        let s = 1.0 / b as f64;
        grad_a[i].iter_mut().zip(&g.d_anchor).for_each(|(x, y)| *x += y * s);
        grad_b[i].iter_mut().zip(&g.d_keys[0]).for_each(|(x, y)| *x += y * s);
        if kind == DenseKind::Cross {
            grad_b[j].iter_mut().zip(&g.d_keys[1]).for_each(|(x, y)| *x += y * s);
        }
    }
    Ok((total / b as f64, grad_a, grad_b))
}

/// Encoder grid before pooling, unit-normalised per position.
pub fn extract_feature_map(encoder: &mut ResNetEncoder, images: &Tensor, expected_d: usize) -> Result<Vec<FeatureMap>> {
    let out = encoder.forward(images, Mode::Eval)?;
    let [n, _, h, w] = out.shape();
    if h != expected_d || w != expected_d {
        return Err(Error::Shape(format!("encoder produced a {h}x{w} grid, expected {expected_d}")));
    }
    let (normed, _) = l2_normalize(&out);
    (0..n).map(|i| FeatureMap::from_tensor(&normed, i)).collect()
}

/// Scatters position-major feature gradients back into NCHW layout.
pub fn grads_to_tensor(grads: &[Vec<f64>], shape: [usize; 4]) -> Result<Tensor> {
    let [n, c, h, w] = shape;
    if grads.len() != n || grads.iter().any(|g| g.len() != c * h * w) {
        return Err(Error::Shape(format!("feature gradients do not fit {shape:?}")));
    }
    let mut t = Tensor::zeros(shape);
    for (i, g) in grads.iter().enumerate() {
        let s = t.sample_mut(i);
        for p in 0..h * w {
            for k in 0..c {
                s[k * h * w + p] = g[p * c + k] as f32;
            }
        }
    }
    Ok(t)
}
