use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use noisypairs_nn::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use crate::error::{Error, IoContext, Result};
use crate::raster::{derive_seed, FloatImage, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Clean,
    Noisy,
    MereExposure,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::Clean => "clean",
            PairKind::Noisy => "noisy",
            PairKind::MereExposure => "mere_exposure",
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// What a drawn non-clean pair looks like.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// (clean, noisy) for VTS, (pre, post) for xBD.
    #[default]
    Noisy,
    /// The noisy/post image twice.
    MereExposure,
}

impl PairingMode {
    pub fn name(self) -> &'static str {
        match self {
            PairingMode::Noisy => "noisy",
            PairingMode::MereExposure => "mere_exposure",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(PairingMode::Noisy),
            "mere_exposure" | "mere-exposure" => Ok(PairingMode::MereExposure),
            _ => Err(Error::InvalidArgument(format!("unknown pairing mode {s:?}"))),
        }
    }
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// `First` is the clean (VTS) or pre-disaster (xBD) image, `Second` the
/// noisy or post-disaster one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairPlan {
    pub kind: PairKind,
    pub a: ViewSource,
    pub b: ViewSource,
}

impl PairPlan {
    fn new(kind: PairKind) -> Self {
        use ViewSource::*;
        let (a, b) = match kind {
            PairKind::Clean => (First, First),
            PairKind::Noisy => (First, Second),
            PairKind::MereExposure => (Second, Second),
        };
        PairPlan { kind, a, b }
    }
}

fn noisy_kind(mode: PairingMode) -> PairKind {
    match mode {
        PairingMode::Noisy => PairKind::Noisy,
        PairingMode::MereExposure => PairKind::MereExposure,
    }
}

/// With probability `r_pairs` the mode's pair, otherwise a clean pair.
pub fn plan_vts<R: Rng>(r_pairs: f64, mode: PairingMode, rng: &mut R) -> Result<PairPlan> {
    if !(0.0..=1.0).contains(&r_pairs) {
        return Err(Error::InvalidArgument(format!("r_pairs {r_pairs} outside [0, 1]")));
    }
    let noisy = rng.random_bool(r_pairs);
    Ok(PairPlan::new(if noisy { noisy_kind(mode) } else { PairKind::Clean }))
}

/// Clean entries always pair pre with post; noisy entries do too unless in
/// mere-exposure mode, where the post image is used twice.
pub fn plan_xbd(noisy_entry: bool, mode: PairingMode) -> PairPlan {
    if noisy_entry {
        PairPlan::new(noisy_kind(mode))
    } else {
        PairPlan {
            kind: PairKind::Clean,
            a: ViewSource::First,
            b: ViewSource::Second,
        }
    }
}

/// Images for one pairable item. `label` is the noiseless dense label, used
/// for both views.
#[derive(Clone, Debug)]
pub struct PairSource {
    pub id: String,
    pub first: FloatImage,
    pub second: FloatImage,
    pub label: LabelMap,
    /// xBD manifest noisiness; unused for VTS.
    pub noisy: bool,
}

impl PairSource {
    pub fn view(&self, v: ViewSource) -> &FloatImage {
        match v {
            ViewSource::First => &self.first,
            ViewSource::Second => &self.second,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AugmentedPair {
    pub id: String,
    pub plan: PairPlan,
    pub view_a: FloatImage,
    pub view_b: FloatImage,
    pub label_a: LabelMap,
    pub label_b: LabelMap,
}

/// Materialises a plan with independent augmentation of each side.
pub fn realize<R: Rng>(source: &PairSource, plan: PairPlan, aug: &AugmentConfig, rng: &mut R) -> AugmentedPair {
    let (view_a, label_a) = augment(source.view(plan.a), Some(&source.label), aug, rng);
    let (view_b, label_b) = augment(source.view(plan.b), Some(&source.label), aug, rng);
    AugmentedPair {
        id: source.id.clone(),
        plan,
        view_a,
        view_b,
        label_a: label_a.expect("label was given"),
        label_b: label_b.expect("label was given"),
    }
}

pub fn sample_pair_vts<R: Rng>(
    source: &PairSource,
    r_pairs: f64,
    mode: PairingMode,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedPair> {
    let plan = plan_vts(r_pairs, mode, rng)?;
    Ok(realize(source, plan, aug, rng))
}

/// Draws a uniformly random manifest entry and pairs it.
pub fn sample_pair_xbd<R: Rng>(
    entries: &[PairSource],
    mode: PairingMode,
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedPair> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("empty manifest".into()));
    }
    let e = &entries[rng.random_range(0..entries.len())];
    Ok(realize(e, plan_xbd(e.noisy, mode), aug, rng))
}

/// How a loader chooses each item's pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairRule {
    Vts { r_pairs: f64, mode: PairingMode },
    Xbd { mode: PairingMode },
}

impl PairRule {
    fn plan<R: Rng>(&self, source: &PairSource, rng: &mut R) -> Result<PairPlan> {
        match *self {
            PairRule::Vts { r_pairs, mode } => plan_vts(r_pairs, mode, rng),
            PairRule::Xbd { mode } => Ok(plan_xbd(source.noisy, mode)),
        }
    }
}

/// Per-channel normalisation applied when images become tensors.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

pub fn images_to_tensor(images: &[&FloatImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images".into()))?;
    let shape = [images.len(), first.channels, first.height, first.width];
    let mut data = Vec::with_capacity(shape.iter().product());
    for img in images {
        if [img.channels, img.height, img.width] != shape[1..] {
            return Err(Error::Shape(format!(
                "image {}x{}x{} in a batch of {:?}",
                img.channels, img.height, img.width, shape
            )));
        }
        data.extend(img.data.iter().map(|v| (v - PIXEL_MEAN) / PIXEL_STD));
    }
    Ok(Tensor::from_vec(shape, data)?)
}

#[derive(Clone, Debug)]
pub struct PairBatch {
    pub ids: Vec<String>,
    pub kinds: Vec<PairKind>,
    pub views_a: Tensor,
    pub views_b: Tensor,
    pub labels_a: Vec<LabelMap>,
    pub labels_b: Vec<LabelMap>,
}

impl PairBatch {
    pub fn from_pairs(pairs: Vec<AugmentedPair>) -> Result<Self> {
        let views_a = images_to_tensor(&pairs.iter().map(|p| &p.view_a).collect::<Vec<_>>())?;
        let views_b = images_to_tensor(&pairs.iter().map(|p| &p.view_b).collect::<Vec<_>>())?;
        let mut batch = PairBatch {
            ids: Vec::with_capacity(pairs.len()),
            kinds: Vec::with_capacity(pairs.len()),
            views_a,
            views_b,
            labels_a: Vec::with_capacity(pairs.len()),
            labels_b: Vec::with_capacity(pairs.len()),
        };
        for p in pairs {
            batch.ids.push(p.id);
            batch.kinds.push(p.plan.kind);
            batch.labels_a.push(p.label_a);
            batch.labels_b.push(p.label_b);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Stateless epoch/batch loader. Every item's randomness is derived from
/// `(seed, epoch, position)`, so results do not depend on thread count.
pub struct PairLoader<'a> {
    pub sources: &'a [PairSource],
    pub rule: PairRule,
    pub augment: AugmentConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl PairLoader<'_> {
    pub fn num_batches(&self) -> usize {
        let n = self.sources.len();
        if self.batch_size == 0 {
            0
        } else if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.sources.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[epoch as u64])));
        order
    }

    fn item_rng(&self, epoch: usize, position: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[epoch as u64, position as u64, 1]))
    }

    pub fn batch(&self, epoch: usize, index: usize) -> Result<PairBatch> {
        let order = self.epoch_order(epoch);
        let lo = index * self.batch_size;
        let hi = (lo + self.batch_size).min(order.len());
        if lo >= hi {
            return Err(Error::InvalidArgument(format!("batch {index} past the end of the epoch")));
        }
        let pairs = (lo..hi)
            .into_par_iter()
            .map(|pos| {
                let src = &self.sources[order[pos]];
                let mut rng = self.item_rng(epoch, pos);
                let plan = self.rule.plan(src, &mut rng)?;
                Ok(realize(src, plan, &self.augment, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        PairBatch::from_pairs(pairs)
    }

    /// The pair kinds an epoch will draw, in position order, without
    /// rendering any image.
    pub fn epoch_plan(&self, epoch: usize) -> Result<Vec<(String, PairKind)>> {
        let n = self.num_batches() * self.batch_size;
        self.epoch_order(epoch)
            .into_iter()
            .take(n.min(self.sources.len()))
            .enumerate()
            .map(|(pos, i)| {
                let src = &self.sources[i];
                let plan = self.rule.plan(src, &mut self.item_rng(epoch, pos))?;
                Ok((src.id.clone(), plan.kind))
            })
            .collect()
    }
}

/// Appends `epoch,position,id,kind` rows, writing a header to a new file.
pub fn append_pair_log(path: &Path, epoch: usize, plan: &[(String, PairKind)]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
    let mut text = String::new();
    if fresh {
        text.push_str("epoch,position,id,kind\n");
    }
    for (pos, (id, kind)) in plan.iter().enumerate() {
        text.push_str(&format!("{epoch},{pos},{id},{kind}\n"));
    }
    f.write_all(text.as_bytes()).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(id: &str, noisy: bool) -> PairSource {
        let mut first = FloatImage::zeros(3, 8, 8);
        first.data.iter_mut().for_each(|v| *v = 0.2);
        let mut second = FloatImage::zeros(3, 8, 8);
        second.data.iter_mut().for_each(|v| *v = 0.8);
        PairSource {
            id: id.into(),
            first,
            second,
            label: LabelMap::filled(8, 8, 1),
            noisy,
        }
    }

    #[test]
    fn vts_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert_eq!(plan_vts(0.0, PairingMode::Noisy, &mut rng).unwrap().kind, PairKind::Clean);
            let p = plan_vts(1.0, PairingMode::Noisy, &mut rng).unwrap();
            assert_eq!((p.kind, p.a, p.b), (PairKind::Noisy, ViewSource::First, ViewSource::Second));
        }
        assert!(plan_vts(1.2, PairingMode::Noisy, &mut rng).is_err());
    }

    #[test]
    fn mere_exposure_uses_second_image_twice() {
        let src = source("x", true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_pair_vts(&src, 1.0, PairingMode::MereExposure, &AugmentConfig::identity(), &mut rng).unwrap();
        assert_eq!(p.plan.kind, PairKind::MereExposure);
        assert_eq!(p.view_a, src.second);
        assert_eq!(p.view_b, src.second);
        let p = sample_pair_xbd(&[src.clone()], PairingMode::MereExposure, &AugmentConfig::identity(), &mut rng)
            .unwrap();
        assert_eq!(p.view_a, src.second);
    }

    #[test]
    fn xbd_clean_entries_never_noisy() {
        let entries = vec![source("a", false), source("b", false)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = sample_pair_xbd(&entries, PairingMode::Noisy, &AugmentConfig::identity(), &mut rng).unwrap();
            assert_eq!(p.plan.kind, PairKind::Clean);
            assert_eq!((p.view_a.data[0], p.view_b.data[0]), (0.2, 0.8));
        }
        assert!(sample_pair_xbd(&[], PairingMode::Noisy, &AugmentConfig::identity(), &mut rng).is_err());
    }

    #[test]
    fn xbd_epoch_histogram_matches_manifest() {
        let entries: Vec<_> = (0..10).map(|i| source(&format!("t{i}"), i < 3)).collect();
        let loader = PairLoader {
            sources: &entries,
            rule: PairRule::Xbd { mode: PairingMode::Noisy },
            augment: AugmentConfig::identity(),
            batch_size: 4,
            seed: 0,
            drop_last: false,
        };
        let plan = loader.epoch_plan(0).unwrap();
        assert_eq!(plan.iter().filter(|p| p.1 == PairKind::Noisy).count(), 3);
        assert_eq!(plan.len(), 10);
        let b = loader.batch(0, 2).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.views_a.shape(), [2, 3, 8, 8]);
    }

    #[test]
    fn loader_is_deterministic() {
        let entries: Vec<_> = (0..6).map(|i| source(&format!("t{i}"), false)).collect();
        let loader = PairLoader {
            sources: &entries,
            rule: PairRule::Vts { r_pairs: 0.5, mode: PairingMode::Noisy },
            augment: AugmentConfig::default(),
            batch_size: 3,
            seed: 4,
            drop_last: true,
        };
        let a = loader.batch(1, 1).unwrap();
        let b = loader.batch(1, 1).unwrap();
        assert_eq!(a.views_a.data(), b.views_a.data());
        assert_eq!(a.kinds, b.kinds);
        let kinds: Vec<PairKind> = loader.epoch_plan(1).unwrap()[3..].iter().map(|p| p.1).collect();
        assert_eq!(kinds, a.kinds);
    }
}
