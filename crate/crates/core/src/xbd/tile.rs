use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMap;

pub const SOURCE_SIZE: usize = 1024;
pub const TILE_SIZE: usize = 512;
/// Lowest damage grade that makes a tile noisy (minor damage and up).
pub const DAMAGE_THRESHOLD: u8 = 2;
pub const MAX_GRADE: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noisiness {
    Clean,
    Noisy,
}

/// A 1024×1024 pre/post scene with rasterised labels.
#[derive(Clone, Debug)]
pub struct SourcePair {
    pub id: String,
    pub site: String,
    pub pre_image: RgbImage,
    pub post_image: RgbImage,
    pub pre_label: Option<LabelMap>,
    pub post_label: Option<LabelMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePair {
    pub id: String,
    pub site: String,
    pub quadrant: usize,
    pub pre_image: RgbImage,
    pub post_image: RgbImage,
    pub pre_label: LabelMap,
    pub post_label: LabelMap,
    pub noisiness: Noisiness,
}

/// Noisy iff the post label shows any damaged building. The pre label is
/// ignored.
pub fn classify(post_label: &LabelMap) -> Noisiness {
    if post_label.data().iter().any(|&v| v >= DAMAGE_THRESHOLD) {
        Noisiness::Noisy
    } else {
        Noisiness::Clean
    }
}

/// Splits a source into its four non-overlapping quadrants, row-major
/// (top-left, top-right, bottom-left, bottom-right).
pub fn tile(source: &SourcePair) -> Result<Vec<TilePair>> {
    let (Some(pre_label), Some(post_label)) = (&source.pre_label, &source.post_label) else {
        return Err(Error::Missing(format!("source {} has no labels", source.id)));
    };
    let dims = [
        (source.pre_image.width() as usize, source.pre_image.height() as usize),
        (source.post_image.width() as usize, source.post_image.height() as usize),
        (pre_label.width(), pre_label.height()),
        (post_label.width(), post_label.height()),
    ];
    if dims.iter().any(|&d| d != (SOURCE_SIZE, SOURCE_SIZE)) {
        return Err(Error::Shape(format!(
            "source {} must be {SOURCE_SIZE}x{SOURCE_SIZE} in every image and label, got {dims:?}",
            source.id
        )));
    }
    let t = TILE_SIZE as u32;
    Ok((0..4)
        .map(|q| {
            let (x0, y0) = ((q % 2) * TILE_SIZE, (q / 2) * TILE_SIZE);
            let post = post_label.crop(x0, y0, TILE_SIZE, TILE_SIZE);
            TilePair {
                id: format!("{}_{q}", source.id),
                site: source.site.clone(),
                quadrant: q,
                pre_image: imageops::crop_imm(&source.pre_image, x0 as u32, y0 as u32, t, t).to_image(),
                post_image: imageops::crop_imm(&source.post_image, x0 as u32, y0 as u32, t, t).to_image(),
                pre_label: pre_label.crop(x0, y0, TILE_SIZE, TILE_SIZE),
                noisiness: classify(&post),
                post_label: post,
            }
        })
        .collect())
}

/// Maps damage grades to a building mask: 0 stays 0, 1..=4 become 1.
pub fn binarize_label(label: &LabelMap) -> Result<LabelMap> {
    if let Some(v) = label.data().iter().find(|&&v| v > MAX_GRADE) {
        return Err(Error::InvalidArgument(format!("label value {v} outside 0..={MAX_GRADE}")));
    }
    let data = label.data().iter().map(|&v| u8::from(v > 0)).collect();
    LabelMap::from_vec(label.width(), label.height(), data)
}
