use std::path::Path;

use noisypairs_nn::{cosine_lr, Mode, Param, Parameterized, ResNetEncoder, SegmentationHead, Sgd, SgdConfig, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::data::{load_finetune_data, FinetuneData, SegSample};
use super::metrics::{f1_report, ConfusionMatrix, F1Report};
use crate::error::{Error, Result};
use crate::pairing::images_to_tensor;
use crate::raster::{derive_seed, write_json_atomic, LabelMap};

pub const METRICS_FILE: &str = "metrics.json";
const ENCODE_BATCH: usize = 64;

/// Inverse class frequencies normalised to mean 1. Empty classes take the
/// largest weight among the non-empty ones.
pub fn class_weights(histogram: &[u64]) -> Result<Vec<f64>> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no labelled pixels".into()));
    }
    let raw: Vec<Option<f64>> = histogram
        .iter()
        .map(|&n| (n > 0).then(|| total as f64 / n as f64))
        .collect();
    let max = raw.iter().flatten().copied().fold(0.0, f64::max);
    let empty: Vec<usize> = raw.iter().enumerate().filter(|(_, w)| w.is_none()).map(|(i, _)| i).collect();
    if !empty.is_empty() {
        log::warn!("classes {empty:?} have no pixels in the finetuning set; clamping their weight to {max}");
    }
    let w: Vec<f64> = raw.iter().map(|w| w.unwrap_or(max)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Ok(w.into_iter().map(|v| v / mean).collect())
}

/// Weighted pixel cross-entropy, normalised by the summed weights. Returns
/// the loss and the logit gradient.
pub fn weighted_cross_entropy(logits: &Tensor, labels: &[&LabelMap], weights: &[f64]) -> Result<(f64, Tensor)> {
    let [n, c, h, w] = logits.shape();
    if labels.len() != n || weights.len() != c {
        return Err(Error::Shape(format!("{} labels and {} weights for logits {:?}", labels.len(), weights.len(), logits.shape())));
    }
    let hw = h * w;
    let mut grad = Tensor::zeros(logits.shape());
    let (mut loss, mut wsum) = (0.0, 0.0);
    let mut probs = vec![0f64; c];
    for (i, label) in labels.iter().enumerate() {
        if label.width() != w || label.height() != h {
            return Err(Error::Shape(format!("{}x{} label for {w}x{h} logits", label.width(), label.height())));
        }
        let s = logits.sample(i);
        let g = grad.sample_mut(i);
        for p in 0..hw {
            let y = label.data()[p] as usize;
            if y >= c {
                return Err(Error::InvalidArgument(format!("label {y} outside {c} classes")));
            }
            let m = (0..c).map(|k| s[k * hw + p]).fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut z = 0.0;
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = (s[k * hw + p] as f64 - m).exp();
                z += *pk;
            }
            let wy = weights[y];
            loss += wy * (z.ln() - (s[y * hw + p] as f64 - m));
            wsum += wy;
            for (k, pk) in probs.iter().enumerate() {
                g[k * hw + p] = (wy * (pk / z - f64::from(k == y))) as f32;
            }
        }
    }
    if wsum > 0.0 {
        let inv = 1.0 / wsum;
        grad.data_mut().iter_mut().for_each(|v| *v = (*v as f64 * inv) as f32);
        loss *= inv;
    }
    Ok((loss, grad))
}

/// Frozen-encoder features for a set of images, computed once.
struct FeatureCache {
    features: Vec<Tensor>,
    labels: Vec<LabelMap>,
}

impl FeatureCache {
    fn build(encoder: &mut ResNetEncoder, samples: &[SegSample]) -> Result<Self> {
        let mut features = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(ENCODE_BATCH) {
            let x = images_to_tensor(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>())?;
            let f = encoder.forward(&x, Mode::Eval)?;
            for i in 0..chunk.len() {
                features.push(f.slice_batch(i..i + 1));
            }
        }
        Ok(FeatureCache {
            features,
            labels: samples.iter().map(|s| s.label.clone()).collect(),
        })
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<&LabelMap>)> {
        let f = Tensor::concat_batch(&idx.iter().map(|&i| &self.features[i]).collect::<Vec<_>>())?;
        Ok((f, idx.iter().map(|&i| &self.labels[i]).collect()))
    }
}

fn argmax_pixels(logits: &Tensor, i: usize) -> Vec<u8> {
    let [_, c, h, w] = logits.shape();
    let hw = h * w;
    let s = logits.sample(i);
    (0..hw)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if s[k * hw + p] > s[best * hw + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

fn evaluate(head: &mut SegmentationHead, cache: &FeatureCache, f1_classes: &[u8]) -> Result<F1Report> {
    let mut cm = ConfusionMatrix::new(head.classes());
    let idx: Vec<usize> = (0..cache.features.len()).collect();
    for chunk in idx.chunks(ENCODE_BATCH) {
        let (f, labels) = cache.batch(chunk)?;
        let (h, w) = (labels[0].height(), labels[0].width());
        let logits = head.forward(&f, h, w, Mode::Eval)?;
        for (i, l) in labels.iter().enumerate() {
            cm.add(&argmax_pixels(&logits, i), l.data())?;
        }
    }
    f1_report(&cm, f1_classes)
}

fn train_head(
    config: &ExperimentConfig,
    cache: &FeatureCache,
    weights: &[f64],
    channels: usize,
    lr: f64,
) -> Result<(SegmentationHead, f64)> {
    let ft = &config.finetune;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[10]));
    let mut head = SegmentationHead::new(channels, config.dataset.classes(), &mut init);
    let mut sgd = Sgd::new(SgdConfig {
        lr: lr as f32,
        momentum: ft.momentum,
        weight_decay: ft.weight_decay,
    });
    let mut order: Vec<usize> = (0..cache.features.len()).collect();
    let per_epoch = order.len().div_ceil(ft.batch_size);
    let total = ft.epochs * per_epoch;
    let mut step = 0;
    let mut last = f64::NAN;
    for epoch in 0..ft.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[11, epoch as u64])));
        let mut sum = 0.0;
        for chunk in order.chunks(ft.batch_size) {
            let (f, labels) = cache.batch(chunk)?;
            let (h, w) = (labels[0].height(), labels[0].width());
            let logits = head.forward(&f, h, w, Mode::Train { record: true })?;
            let (loss, grad) = weighted_cross_entropy(&logits, &labels, weights)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            head.zero_grad();
            head.backward(&grad)?;
            sgd.step(head.params_mut(), cosine_lr(lr as f32, step, total));
            sum += loss;
            step += 1;
        }
        last = sum / per_epoch as f64;
    }
    Ok((head, last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTrial {
    pub lr: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMetrics {
    pub per_class_f1: std::collections::BTreeMap<u8, Option<f64>>,
    pub macro_f1: f64,
    pub lr: f64,
    pub lr_trials: Vec<LrTrial>,
    pub class_weights: Vec<f64>,
    pub checkpoint_epoch: usize,
    pub config: ExperimentConfig,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub metrics: FinetuneMetrics,
    pub head: Vec<Param>,
    /// Encoder state after finetuning; equal to the checkpoint's.
    pub encoder: Vec<Param>,
}

pub fn finetune(checkpoint: &Checkpoint, out_dir: Option<&Path>) -> Result<FinetuneOutcome> {
    let data = load_finetune_data(&checkpoint.config)?;
    finetune_with_data(checkpoint, &data, out_dir)
}

/// Trains a segmentation head on frozen encoder features for each learning
/// rate of the grid, keeps the one with the best validation macro F1 and
/// reports F1 on the test set.
pub fn finetune_with_data(checkpoint: &Checkpoint, data: &FinetuneData, out_dir: Option<&Path>) -> Result<FinetuneOutcome> {
    let config = &checkpoint.config;
    config.validate()?;
    let mut encoder = ResNetEncoder::new(config.encoder.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    encoder.load_state_dict(&checkpoint.encoder)?;
    for (split, set) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {split} set")));
        }
        if let Some(s) = set
            .iter()
            .find(|s| s.image.width != config.input_size || s.image.height != config.input_size)
        {
            return Err(Error::Shape(format!(
                "{} is {}x{}, the checkpoint expects {}x{}",
                s.id, s.image.width, s.image.height, config.input_size, config.input_size
            )));
        }
    }
    let train = FeatureCache::build(&mut encoder, &data.train)?;
    let val = FeatureCache::build(&mut encoder, &data.val)?;
    let test = FeatureCache::build(&mut encoder, &data.test)?;
    let channels = train.features[0].channels();

    let classes = config.dataset.classes();
    let mut hist = vec![0u64; classes];
    for l in &train.labels {
        for (h, v) in hist.iter_mut().zip(l.histogram(classes)) {
            *h += v;
        }
    }
    let weights = class_weights(&hist)?;
    let f1_classes = config.dataset.f1_classes();

    let mut trials = Vec::new();
    let mut best: Option<(SegmentationHead, f64, f64)> = None;
    for &lr in &config.finetune.lr_grid {
        let (mut head, train_loss) = train_head(config, &train, &weights, channels, lr)?;
        let val_f1 = evaluate(&mut head, &val, &f1_classes)?.macro_f1;
        log::info!("finetune lr {lr}: train loss {train_loss:.4}, val macro F1 {val_f1:.4}");
        trials.push(LrTrial {
            lr,
            train_loss,
            val_macro_f1: val_f1,
        });
        if best.as_ref().is_none_or(|b| val_f1 > b.2) {
            best = Some((head, lr, val_f1));
        }
    }
    let (mut head, lr, _) = best.expect("lr grid is not empty");
    let report = evaluate(&mut head, &test, &f1_classes)?;
    let metrics = FinetuneMetrics {
        per_class_f1: report.per_class_f1,
        macro_f1: report.macro_f1,
        lr,
        lr_trials: trials,
        class_weights: weights,
        checkpoint_epoch: checkpoint.epoch,
        config: config.clone(),
        seed: config.seed,
    };
    if let Some(dir) = out_dir {
        write_json_atomic(&dir.join(METRICS_FILE), &metrics)?;
    }
    Ok(FinetuneOutcome {
        metrics,
        head: head.state_dict(),
        encoder: encoder.state_dict(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_follow_inverse_frequency() {
        let w = class_weights(&[90, 10]).unwrap();
        let raw = [1.0 / 0.9, 1.0 / 0.1];
        let mean = (raw[0] + raw[1]) / 2.0;
        assert!((w[0] - raw[0] / mean).abs() < 1e-12);
        assert!((w[1] - raw[1] / mean).abs() < 1e-12);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_a_class_halves_its_relative_weight() {
        let a = class_weights(&[100, 50, 25]).unwrap();
        let b = class_weights(&[100, 100, 25]).unwrap();
        assert!(((a[1] / a[0]) / (b[1] / b[0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_clamped() {
        let w = class_weights(&[80, 20, 0]).unwrap();
        assert_eq!(w[2], w[1]);
        assert!(class_weights(&[0, 0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut logits = Tensor::zeros([1, 3, 2, 2]);
        for (i, v) in logits.data_mut().iter_mut().enumerate() {
            *v = ((i * 7) % 5) as f32 * 0.3 - 0.6;
        }
        let label = LabelMap::from_vec(2, 2, vec![0, 2, 1, 2]).unwrap();
        let w = [0.5, 1.0, 1.5];
        let (_, g) = weighted_cross_entropy(&logits, &[&label], &w).unwrap();
        for i in 0..12 {
            let mut p = logits.clone();
            p.data_mut()[i] += 1e-3;
            let mut m = logits.clone();
            m.data_mut()[i] -= 1e-3;
            let lp = weighted_cross_entropy(&p, &[&label], &w).unwrap().0;
            let lm = weighted_cross_entropy(&m, &[&label], &w).unwrap().0;
            assert!(((lp - lm) / 2e-3 - g.data()[i] as f64).abs() < 1e-4);
        }
    }
}
