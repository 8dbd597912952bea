//! Directory-level ingest: xBD-style sources in, tiles and a pretraining
//! manifest out.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::polygon::{parse_annotations, rasterize_labels};
use super::split::{split_train_val, undersample, DEFAULT_TRAIN_RATIO};
use super::tile::{tile, Noisiness, SourcePair, TilePair};
use crate::error::{Error, IoContext, Result};
use crate::raster::{load_rgb, read_json, save_rgb, write_json_atomic, LabelMap};

pub const MANIFEST_FILE: &str = "pretrain_manifest.json";

/// Paths are relative to the directory holding the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub id: String,
    pub site: String,
    pub noisiness: Noisiness,
    pub pre_image: PathBuf,
    pub post_image: PathBuf,
    pub pre_label: PathBuf,
    pub post_label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainManifest {
    pub r_pairs: f64,
    pub seed: u64,
    /// Undersampled pretraining pairs.
    pub clean_pairs: Vec<TileRef>,
    pub noisy_pairs: Vec<TileRef>,
    /// The whole training split, before undersampling.
    pub train_pairs: Vec<TileRef>,
    pub val_pairs: Vec<TileRef>,
    pub test_pairs: Vec<TileRef>,
    pub skipped_polygons: usize,
}

impl PretrainManifest {
    pub fn noisy_rate(&self) -> f64 {
        let n = self.noisy_pairs.len() + self.clean_pairs.len();
        if n == 0 {
            0.0
        } else {
            self.noisy_pairs.len() as f64 / n as f64
        }
    }

    /// Redraws the pretraining pool from the training split at another rate.
    /// Validation and test lists are untouched.
    pub fn resample(&self, r_pairs: f64, seed: u64) -> Result<Self> {
        let (clean, noisy): (Vec<TileRef>, Vec<TileRef>) = self
            .train_pairs
            .iter()
            .cloned()
            .partition(|t| t.noisiness == Noisiness::Clean);
        let (clean_pairs, noisy_pairs) = undersample(&clean, &noisy, r_pairs, seed)?;
        Ok(PretrainManifest {
            r_pairs,
            seed,
            clean_pairs,
            noisy_pairs,
            ..self.clone()
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Builds a manifest from already classified training tiles.
pub fn undersample_to_rate(clean: &[TileRef], noisy: &[TileRef], r_pairs: f64, seed: u64) -> Result<PretrainManifest> {
    let (clean_pairs, noisy_pairs) = undersample(clean, noisy, r_pairs, seed)?;
    let mut train_pairs: Vec<TileRef> = clean.iter().chain(noisy).cloned().collect();
    train_pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(PretrainManifest {
        r_pairs,
        seed,
        clean_pairs,
        noisy_pairs,
        train_pairs,
        val_pairs: Vec::new(),
        test_pairs: Vec::new(),
        skipped_polygons: 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestConfig {
    pub r_pairs: f64,
    pub seed: u64,
    pub train_ratio: f64,
}

impl IngestConfig {
    pub fn new(r_pairs: f64, seed: u64) -> Self {
        IngestConfig {
            r_pairs,
            seed,
            train_ratio: DEFAULT_TRAIN_RATIO,
        }
    }
}

/// One pre/post scene found on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceFiles {
    pub stem: String,
    pub site: String,
    pub pre_image: PathBuf,
    pub post_image: PathBuf,
    pub pre_label: PathBuf,
    pub post_label: PathBuf,
}

/// `hurricane-harvey_00000012` belongs to site `hurricane-harvey`.
pub fn site_of_stem(stem: &str) -> &str {
    stem.rsplit_once('_').map_or(stem, |(site, _)| site)
}

fn label_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let json = dir.join("labels").join(format!("{name}.json"));
    if json.is_file() {
        return Ok(json);
    }
    let mask = dir.join("masks").join(format!("{name}.png"));
    if mask.is_file() {
        return Ok(mask);
    }
    Err(Error::Missing(format!("no label for {name} under {}", dir.display())))
}

/// Finds `images/<stem>_pre_disaster.png` with its post image and labels
/// (`labels/*.json` polygons or `masks/*.png` rasters).
pub fn discover_sources(dir: &Path) -> Result<Vec<SourceFiles>> {
    let images = dir.join("images");
    let mut stems: Vec<String> = fs::read_dir(&images)
        .at(&images)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_pre_disaster.png"))
                .map(str::to_string)
        })
        .collect();
    stems.sort();
    stems
        .into_iter()
        .map(|stem| {
            let post_image = images.join(format!("{stem}_post_disaster.png"));
            if !post_image.is_file() {
                return Err(Error::Missing(format!("{} has no post image", stem)));
            }
            Ok(SourceFiles {
                site: site_of_stem(&stem).to_string(),
                pre_image: images.join(format!("{stem}_pre_disaster.png")),
                post_image,
                pre_label: label_path(dir, &format!("{stem}_pre_disaster"))?,
                post_label: label_path(dir, &format!("{stem}_post_disaster"))?,
                stem,
            })
        })
        .collect()
}

fn load_label(path: &Path, width: usize, height: usize) -> Result<(LabelMap, usize)> {
    if path.extension().is_some_and(|e| e == "png") {
        return Ok((LabelMap::load_png(path)?, 0));
    }
    let doc: serde_json::Value = read_json(path)?;
    let ann = parse_annotations(&doc);
    Ok((rasterize_labels(&ann.polygons, width, height), ann.skipped))
}

/// Loads and rasterises one source; returns it with its skipped-record count.
pub fn load_source(files: &SourceFiles) -> Result<(SourcePair, usize)> {
    let pre_image = load_rgb(&files.pre_image)?;
    let post_image = load_rgb(&files.post_image)?;
    let (w, h) = (post_image.width() as usize, post_image.height() as usize);
    let (pre_label, s1) = load_label(&files.pre_label, w, h)?;
    let (post_label, s2) = load_label(&files.post_label, w, h)?;
    Ok((
        SourcePair {
            id: files.stem.clone(),
            site: files.site.clone(),
            pre_image,
            post_image,
            pre_label: Some(pre_label),
            post_label: Some(post_label),
        },
        s1 + s2,
    ))
}

fn write_tile(out: &Path, t: &TilePair) -> Result<TileRef> {
    let rel = PathBuf::from("tiles").join(&t.id);
    let dir = out.join(&rel);
    fs::create_dir_all(&dir).at(&dir)?;
    let r = TileRef {
        id: t.id.clone(),
        site: t.site.clone(),
        noisiness: t.noisiness,
        pre_image: rel.join("pre.png"),
        post_image: rel.join("post.png"),
        pre_label: rel.join("pre_label.png"),
        post_label: rel.join("post_label.png"),
    };
    save_rgb(&t.pre_image, &out.join(&r.pre_image))?;
    save_rgb(&t.post_image, &out.join(&r.post_image))?;
    t.pre_label.save_png(&out.join(&r.pre_label))?;
    t.post_label.save_png(&out.join(&r.post_label))?;
    Ok(r)
}

fn tile_dir(dir: &Path, out: &Path) -> Result<(Vec<TileRef>, usize)> {
    let sources = discover_sources(dir)?;
    let per_source: Vec<(Vec<TileRef>, usize)> = sources
        .par_iter()
        .map(|files| {
            let (source, skipped) = load_source(files)?;
            let refs = tile(&source)?
                .iter()
                .map(|t| write_tile(out, t))
                .collect::<Result<Vec<_>>>()?;
            Ok((refs, skipped))
        })
        .collect::<Result<_>>()?;
    let skipped = per_source.iter().map(|p| p.1).sum();
    Ok((per_source.into_iter().flat_map(|p| p.0).collect(), skipped))
}

/// Tiles every source under `input`, splits train/val by site, undersamples
/// the training split to `r_pairs` and writes `pretrain_manifest.json`.
/// An optional `input/test` directory with the same layout becomes the test
/// split.
pub fn ingest(input: &Path, out: &Path, config: &IngestConfig) -> Result<PretrainManifest> {
    fs::create_dir_all(out).at(out)?;
    let (tiles, mut skipped) = tile_dir(input, out)?;
    if tiles.is_empty() {
        return Err(Error::Missing(format!("no sources under {}", input.display())));
    }
    let (train_idx, val_idx) = split_train_val(&tiles, |t| t.site.as_str(), config.train_ratio, config.seed)?;
    let (clean, noisy): (Vec<TileRef>, Vec<TileRef>) = train_idx
        .iter()
        .map(|&i| tiles[i].clone())
        .partition(|t| t.noisiness == Noisiness::Clean);
    let mut manifest = undersample_to_rate(&clean, &noisy, config.r_pairs, config.seed)?;
    manifest.val_pairs = val_idx.iter().map(|&i| tiles[i].clone()).collect();
    let test_dir = input.join("test");
    if test_dir.join("images").is_dir() {
        let (test, s) = tile_dir(&test_dir, out)?;
        manifest.test_pairs = test;
        skipped += s;
    }
    manifest.skipped_polygons = skipped;
    write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "ingested {} tiles: {} clean + {} noisy pretraining pairs, {} val, {} test",
        tiles.len(),
        manifest.clean_pairs.len(),
        manifest.noisy_pairs.len(),
        manifest.val_pairs.len(),
        manifest.test_pairs.len()
    );
    Ok(manifest)
}
