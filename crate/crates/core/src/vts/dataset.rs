//! On-disk VTS datasets: generation, manifests, loading and verification.
//!
//! Layout: `<root>/<split>/<id>/{clean,noisy}.png`, `{label,noisy_label}.png`
//! (8-bit single channel) and `manifest.json`, plus `<root>/dataset.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::{check_sample, compose_image, inject_noise, NoiseMode, VtsSample, Window};
use super::layout::{generate_layout, LayoutRecord, VoronoiLayout};
use super::texture::{Split, Texture, TextureBank, TextureClass, DEFAULT_SPLIT_RATIOS};
use crate::error::{Error, IoContext, Result};
use crate::raster::{derive_seed, load_rgb, read_json, save_rgb, write_json_atomic, LabelMap};

pub const DATASET_FILE: &str = "dataset.json";
pub const SAMPLE_MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub textures: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub n_cells: usize,
    pub r_img: f64,
    pub master_seed: u64,
    pub noise_mode: NoiseMode,
    pub split_ratios: [f64; 3],
}

impl GeneratorConfig {
    /// 6000/3600/2400 images of 256×256.
    pub fn paper(textures: impl Into<PathBuf>, r_img: f64, master_seed: u64) -> Self {
        GeneratorConfig {
            textures: textures.into(),
            n_train: 6000,
            n_val: 3600,
            n_test: 2400,
            image_size: 256,
            n_cells: 20,
            r_img,
            master_seed,
            noise_mode: NoiseMode::Relevant,
            split_ratios: DEFAULT_SPLIT_RATIOS,
        }
    }

    /// 600/360/240 images of 64×64.
    pub fn desk(textures: impl Into<PathBuf>, r_img: f64, master_seed: u64) -> Self {
        GeneratorConfig {
            n_train: 600,
            n_val: 360,
            n_test: 240,
            image_size: 64,
            ..Self::paper(textures, r_img, master_seed)
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// Validation pairings are always noise free.
    pub fn r_img_for(&self, split: Split) -> f64 {
        match split {
            Split::Val => 0.0,
            _ => self.r_img,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r_img) {
            return Err(Error::InvalidArgument(format!("r_img {} outside [0, 1]", self.r_img)));
        }
        if self.n_cells < 2 || self.image_size < self.n_cells {
            return Err(Error::InvalidArgument(format!(
                "{} cells in a {}px image",
                self.n_cells, self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextureChoice {
    pub class_a: String,
    pub class_b: String,
    pub noise: String,
    pub window_a: Window,
    pub window_b: Window,
    pub window_noise: Window,
}

/// Everything needed to reproduce and re-verify one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub id: String,
    pub split: Split,
    pub index: usize,
    pub rng_seed: u64,
    pub r_img: f64,
    pub noise_mode: NoiseMode,
    pub layout: LayoutRecord,
    pub replaced_cells: BTreeSet<u16>,
    pub textures: TextureChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub config: GeneratorConfig,
    pub counts: BTreeMap<Split, usize>,
}

pub fn sample_id(split: Split, index: usize) -> String {
    format!("{}_{index:05}", split.name())
}

/// Textures of one split, loaded once and shared read-only between workers.
pub struct SplitTextures {
    root: PathBuf,
    by_class: BTreeMap<TextureClass, Vec<Texture>>,
}

impl SplitTextures {
    pub fn load(bank: &TextureBank, root: &Path, split: Split) -> Result<Self> {
        Ok(SplitTextures {
            root: root.to_path_buf(),
            by_class: bank.load_split(split)?,
        })
    }

    fn pick<R: Rng>(&self, class: TextureClass, rng: &mut R) -> Result<&Texture> {
        let list = self
            .by_class
            .get(&class)
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::Missing(format!("no {class} textures in this split")))?;
        Ok(&list[rng.random_range(0..list.len())])
    }

    fn relative(&self, t: &Texture) -> String {
        Path::new(&t.name)
            .strip_prefix(&self.root)
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| t.name.clone())
    }
}

/// Generates one sample; a pure function of the config, split and index.
pub fn generate_sample(
    config: &GeneratorConfig,
    textures: &SplitTextures,
    split: Split,
    index: usize,
) -> Result<(VoronoiLayout, VtsSample, SampleManifest)> {
    let seed = derive_seed(config.master_seed, &[split.index(), index as u64]);
    let layout = generate_layout(config.image_size, config.n_cells, derive_seed(seed, &[0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let a = textures.pick(TextureClass::Stratified, &mut rng)?;
    let b = textures.pick(TextureClass::Veined, &mut rng)?;
    let noise = textures.pick(TextureClass::Matted, &mut rng)?;
    let composed = compose_image(&layout, a, b, &mut rng)?;
    let sample = inject_noise(
        &composed,
        &layout,
        noise,
        config.r_img_for(split),
        derive_seed(seed, &[2]),
        config.noise_mode,
    )?;
    let manifest = SampleManifest {
        id: sample_id(split, index),
        split,
        index,
        rng_seed: seed,
        r_img: sample.r_img,
        noise_mode: sample.noise_mode,
        layout: LayoutRecord::from(&layout),
        replaced_cells: sample.replaced_cells.clone(),
        textures: TextureChoice {
            class_a: textures.relative(a),
            class_b: textures.relative(b),
            noise: textures.relative(noise),
            window_a: composed.windows[0],
            window_b: composed.windows[1],
            window_noise: sample.noise_window,
        },
    };
    Ok((layout, sample, manifest))
}

fn write_sample(dir: &Path, sample: &VtsSample, manifest: &SampleManifest) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    save_rgb(&sample.clean_image, &dir.join("clean.png"))?;
    save_rgb(&sample.noisy_image, &dir.join("noisy.png"))?;
    sample.clean_label.save_png(&dir.join("label.png"))?;
    sample.noisy_label.save_png(&dir.join("noisy_label.png"))?;
    write_json_atomic(&dir.join(SAMPLE_MANIFEST_FILE), manifest)
}

/// Generates all three splits under `out`. Samples are produced in parallel;
/// `dataset.json` is written last.
pub fn generate_dataset(config: &GeneratorConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let bank = TextureBank::from_dir(&config.textures, config.split_ratios, config.master_seed)?;
    fs::create_dir_all(out).at(out)?;
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        let textures = SplitTextures::load(&bank, &config.textures, split)?;
        let n = config.count(split);
        (0..n).into_par_iter().try_for_each(|i| -> Result<()> {
            let (_, sample, manifest) = generate_sample(config, &textures, split, i)?;
            write_sample(&out.join(split.name()).join(&manifest.id), &sample, &manifest)
        })?;
        counts.insert(split, n);
    }
    let manifest = DatasetManifest {
        master_seed: config.master_seed,
        config: config.clone(),
        counts,
    };
    write_json_atomic(&out.join(DATASET_FILE), &manifest)?;
    Ok(manifest)
}

/// Variant whose noise texture is not a downstream class: replaced cells keep
/// their original label.
pub fn generate_irrelevant_noise_dataset(config: &GeneratorConfig, out: &Path) -> Result<DatasetManifest> {
    let config = GeneratorConfig {
        noise_mode: NoiseMode::Irrelevant,
        ..config.clone()
    };
    generate_dataset(&config, out)
}

/// One sample as stored on disk.
#[derive(Clone, Debug)]
pub struct VtsRecord {
    pub manifest: SampleManifest,
    pub clean_image: RgbImage,
    pub noisy_image: RgbImage,
    pub clean_label: LabelMap,
    pub noisy_label: LabelMap,
}

impl VtsRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(VtsRecord {
            manifest: read_json(&dir.join(SAMPLE_MANIFEST_FILE))?,
            clean_image: load_rgb(&dir.join("clean.png"))?,
            noisy_image: load_rgb(&dir.join("noisy.png"))?,
            clean_label: LabelMap::load_png(&dir.join("label.png"))?,
            noisy_label: LabelMap::load_png(&dir.join("noisy_label.png"))?,
        })
    }

    pub fn to_sample(&self) -> VtsSample {
        VtsSample {
            clean_image: self.clean_image.clone(),
            noisy_image: self.noisy_image.clone(),
            clean_label: self.clean_label.clone(),
            noisy_label: self.noisy_label.clone(),
            replaced_cells: self.manifest.replaced_cells.clone(),
            r_img: self.manifest.r_img,
            rng_seed: self.manifest.rng_seed,
            noise_window: self.manifest.textures.window_noise,
            noise_mode: self.manifest.noise_mode,
        }
    }
}

/// A generated dataset loaded into memory.
#[derive(Clone, Debug)]
pub struct VtsDataset {
    pub manifest: DatasetManifest,
    pub splits: BTreeMap<Split, Vec<VtsRecord>>,
}

impl VtsDataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: DatasetManifest = read_json(&root.join(DATASET_FILE))?;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let n = manifest.counts.get(&split).copied().unwrap_or(0);
            let records = (0..n)
                .into_par_iter()
                .map(|i| VtsRecord::load(&root.join(split.name()).join(sample_id(split, i))))
                .collect::<Result<Vec<_>>>()?;
            splits.insert(split, records);
        }
        Ok(VtsDataset { manifest, splits })
    }

    pub fn split(&self, split: Split) -> &[VtsRecord] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Summary of a full re-verification pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub samples: usize,
    pub violations: Vec<String>,
}

/// Re-parses every manifest, rebuilds the layout from the recorded seeds and
/// checks all sample invariants against the stored PNGs.
pub fn verify_dataset(root: &Path) -> Result<VerifyReport> {
    let data = VtsDataset::load(root)?;
    let mut report = VerifyReport::default();
    for records in data.splits.values() {
        for rec in records {
            report.samples += 1;
            let layout = rec.manifest.layout.rebuild()?;
            let problem = if !layout.is_partition() {
                Some("layout is not a partition".to_string())
            } else if layout.class_cell_counts()[0] != layout.n_cells() / 2 {
                Some(format!("unbalanced classes {:?}", layout.class_cell_counts()))
            } else {
                check_sample(&rec.to_sample(), &layout).err()
            };
            if let Some(p) = problem {
                report.violations.push(format!("{}: {p}", rec.manifest.id));
            }
        }
    }
    Ok(report)
}
