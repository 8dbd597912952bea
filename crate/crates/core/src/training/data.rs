//! Turns generated VTS datasets and ingested xBD manifests into pair sources
//! for pretraining and image/label sets for finetuning.

use std::path::Path;

use rayon::prelude::*;

use super::config::{DatasetKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::pairing::{PairRule, PairSource};
use crate::raster::{load_rgb, FloatImage, LabelMap};
use crate::vts::{Split, VtsDataset, VtsRecord};
use crate::xbd::{binarize_label, Noisiness, PretrainManifest, TileRef, MANIFEST_FILE};

/// One image with its full-resolution label.
#[derive(Clone, Debug)]
pub struct SegSample {
    pub id: String,
    pub image: FloatImage,
    pub label: LabelMap,
}

pub struct PretrainData {
    pub train: Vec<PairSource>,
    /// Noise-free pairs for checkpoint selection.
    pub val: Vec<PairSource>,
    pub rule: PairRule,
}

pub struct FinetuneData {
    pub train: Vec<SegSample>,
    pub val: Vec<SegSample>,
    pub test: Vec<SegSample>,
}

fn fit_image(img: FloatImage, size: usize) -> FloatImage {
    img.resize_bilinear(size, size)
}

fn fit_label(label: LabelMap, size: usize) -> LabelMap {
    label.resize_nearest(size, size)
}

fn load_vts(config: &ExperimentConfig) -> Result<VtsDataset> {
    let data = VtsDataset::load(&config.data_dir)?;
    let stored = data.manifest.config.r_img;
    if let Some(r) = config.r_img {
        if (r - stored).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "config asks for r_img {r} but {} was generated with {stored}",
                config.data_dir.display()
            )));
        }
    }
    Ok(data)
}

fn vts_pair(rec: &VtsRecord, size: usize) -> PairSource {
    PairSource {
        id: rec.manifest.id.clone(),
        first: fit_image(FloatImage::from_rgb(&rec.clean_image), size),
        second: fit_image(FloatImage::from_rgb(&rec.noisy_image), size),
        label: fit_label(rec.clean_label.clone(), size),
        noisy: !rec.manifest.replaced_cells.is_empty(),
    }
}

fn xbd_manifest(config: &ExperimentConfig) -> Result<PretrainManifest> {
    let m = PretrainManifest::load(&config.data_dir.join(MANIFEST_FILE))?;
    if (m.r_pairs - config.r_pairs).abs() > 1e-12 {
        return m.resample(config.r_pairs, config.seed);
    }
    Ok(m)
}

fn load_xbd_pair(root: &Path, t: &TileRef, size: usize) -> Result<PairSource> {
    let pre_label = LabelMap::load_png(&root.join(&t.pre_label))?;
    Ok(PairSource {
        id: t.id.clone(),
        first: fit_image(FloatImage::from_rgb(&load_rgb(&root.join(&t.pre_image))?), size),
        second: fit_image(FloatImage::from_rgb(&load_rgb(&root.join(&t.post_image))?), size),
        label: fit_label(binarize_label(&pre_label)?, size),
        noisy: t.noisiness == Noisiness::Noisy,
    })
}

fn load_xbd_seg(root: &Path, t: &TileRef, size: usize) -> Result<SegSample> {
    Ok(SegSample {
        id: t.id.clone(),
        image: fit_image(FloatImage::from_rgb(&load_rgb(&root.join(&t.post_image))?), size),
        label: fit_label(LabelMap::load_png(&root.join(&t.post_label))?, size),
    })
}

/// Pretraining pairs. VTS pairs are drawn at `r_pairs` per item; xBD pairs
/// follow the manifest, redrawn at `r_pairs` when it was ingested at another
/// rate. Validation always uses clean pairs.
pub fn load_pretrain_data(config: &ExperimentConfig) -> Result<PretrainData> {
    let size = config.input_size;
    match config.dataset {
        DatasetKind::Vts => {
            let data = load_vts(config)?;
            let train = data.split(Split::Train).par_iter().map(|r| vts_pair(r, size)).collect();
            let val = data.split(Split::Val).par_iter().map(|r| vts_pair(r, size)).collect();
            Ok(PretrainData {
                train,
                val,
                rule: PairRule::Vts {
                    r_pairs: config.r_pairs,
                    mode: config.pairing_mode,
                },
            })
        }
        DatasetKind::Xbd => {
            let m = xbd_manifest(config)?;
            let root = &config.data_dir;
            let train = m
                .clean_pairs
                .par_iter()
                .chain(m.noisy_pairs.par_iter())
                .map(|t| load_xbd_pair(root, t, size))
                .collect::<Result<Vec<_>>>()?;
            let val = m
                .val_pairs
                .par_iter()
                .filter(|t| t.noisiness == Noisiness::Clean)
                .map(|t| load_xbd_pair(root, t, size))
                .collect::<Result<Vec<_>>>()?;
            Ok(PretrainData {
                train,
                val,
                rule: PairRule::Xbd {
                    mode: config.pairing_mode,
                },
            })
        }
    }
}

fn vts_seg(records: &[VtsRecord], size: usize) -> Vec<SegSample> {
    records
        .par_iter()
        .flat_map_iter(|r| {
            let clean = SegSample {
                id: format!("{}_clean", r.manifest.id),
                image: fit_image(FloatImage::from_rgb(&r.clean_image), size),
                label: fit_label(r.clean_label.clone(), size),
            };
            let noisy = (!r.manifest.replaced_cells.is_empty()).then(|| SegSample {
                id: format!("{}_noisy", r.manifest.id),
                image: fit_image(FloatImage::from_rgb(&r.noisy_image), size),
                label: fit_label(r.noisy_label.clone(), size),
            });
            std::iter::once(clean).chain(noisy)
        })
        .collect()
}

/// Finetuning sets. VTS uses clean images with their labels plus noisy
/// images with their three-class labels; xBD uses post images with damage
/// grades.
pub fn load_finetune_data(config: &ExperimentConfig) -> Result<FinetuneData> {
    let size = config.input_size;
    match config.dataset {
        DatasetKind::Vts => {
            let data = load_vts(config)?;
            Ok(FinetuneData {
                train: vts_seg(data.split(Split::Train), size),
                val: vts_seg(data.split(Split::Val), size),
                test: vts_seg(data.split(Split::Test), size),
            })
        }
        DatasetKind::Xbd => {
            let m = xbd_manifest(config)?;
            let root = &config.data_dir;
            let load = |list: &[TileRef]| -> Result<Vec<SegSample>> {
                list.par_iter().map(|t| load_xbd_seg(root, t, size)).collect()
            };
            let val = load(&m.val_pairs)?;
            let test = if m.test_pairs.is_empty() {
                log::warn!("no test tiles in {}; reporting on validation tiles", root.display());
                val.clone()
            } else {
                load(&m.test_pairs)?
            };
            Ok(FinetuneData {
                train: load(&m.train_pairs)?,
                val,
                test,
            })
        }
    }
}
