//! Texture sources: a per-class bank split into train/val/test, and a
//! procedural generator for stand-in textures.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::raster::{derive_seed, load_rgb, save_rgb};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureClass {
    Stratified,
    Veined,
    Matted,
}

impl TextureClass {
    pub const ALL: [TextureClass; 3] = [
        TextureClass::Stratified,
        TextureClass::Veined,
        TextureClass::Matted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextureClass::Stratified => "stratified",
            TextureClass::Veined => "veined",
            TextureClass::Matted => "matted",
        }
    }
}

impl fmt::Display for TextureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// A loaded texture image and the file it came from.
#[derive(Clone, Debug)]
pub struct Texture {
    pub name: String,
    pub image: RgbImage,
}

impl Texture {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Texture {
            name: path.display().to_string(),
            image: load_rgb(path)?,
        })
    }
}

/// Texture files per class, partitioned into disjoint train/val/test lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureBank {
    pub class_textures: BTreeMap<TextureClass, BTreeMap<Split, Vec<PathBuf>>>,
    pub split_ratios: [f64; 3],
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.5, 0.3, 0.2];

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

impl TextureBank {
    /// Scans `root/<class>/` or the DTD layout `root/images/<class>/` and
    /// splits each class's files (sorted, then shuffled with `seed`).
    pub fn from_dir(root: &Path, split_ratios: [f64; 3], seed: u64) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Missing(format!(
                "texture directory {} does not exist",
                root.display()
            )));
        }
        validate_ratios(split_ratios)?;
        let mut class_textures = BTreeMap::new();
        for class in TextureClass::ALL {
            let dir = [root.join(class.name()), root.join("images").join(class.name())]
                .into_iter()
                .find(|d| d.is_dir())
                .ok_or_else(|| {
                    Error::Missing(format!(
                        "no '{}' texture directory under {}",
                        class.name(),
                        root.display()
                    ))
                })?;
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .at(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| is_image(p))
                .collect();
            files.sort();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[class as u64]));
            files.shuffle(&mut rng);
            class_textures.insert(class, split_files(class, files, split_ratios)?);
        }
        Ok(TextureBank {
            class_textures,
            split_ratios,
        })
    }

    pub fn files(&self, class: TextureClass, split: Split) -> &[PathBuf] {
        self.class_textures
            .get(&class)
            .and_then(|m| m.get(&split))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Loads every texture of one split, per class.
    pub fn load_split(&self, split: Split) -> Result<BTreeMap<TextureClass, Vec<Texture>>> {
        let mut out = BTreeMap::new();
        for class in TextureClass::ALL {
            let textures = self
                .files(class, split)
                .iter()
                .map(|p| Texture::load(p))
                .collect::<Result<Vec<_>>>()?;
            out.insert(class, textures);
        }
        Ok(out)
    }

    /// True when no file appears in more than one split.
    pub fn splits_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.class_textures
            .values()
            .flat_map(|m| m.values().flatten())
            .all(|p| seen.insert(p.clone()))
    }
}

fn validate_ratios(r: [f64; 3]) -> Result<()> {
    if r.iter().any(|v| !(0.0..=1.0).contains(v) || *v == 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {r:?} must be positive and sum to 1"
        )));
    }
    Ok(())
}

fn split_files(
    class: TextureClass,
    files: Vec<PathBuf>,
    ratios: [f64; 3],
) -> Result<BTreeMap<Split, Vec<PathBuf>>> {
    let n = files.len();
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "{n} '{class}' textures cannot be split at {ratios:?} with every split non-empty"
        )));
    }
    let mut it = files.into_iter();
    let mut out = BTreeMap::new();
    out.insert(Split::Train, it.by_ref().take(n_train).collect());
    out.insert(Split::Val, it.by_ref().take(n_val).collect());
    out.insert(Split::Test, it.collect());
    Ok(out)
}

/// Smooth value noise on a periodic lattice.
struct ValueNoise {
    period: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new<R: Rng>(period: usize, rng: &mut R) -> Self {
        ValueNoise {
            period,
            lattice: (0..period * period).map(|_| rng.random::<f32>()).collect(),
        }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let p = self.period;
        let (xf, yf) = (x.rem_euclid(p as f32), y.rem_euclid(p as f32));
        let (x0, y0) = (xf.floor() as usize % p, yf.floor() as usize % p);
        let (x1, y1) = ((x0 + 1) % p, (y0 + 1) % p);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(xf.fract()), smooth(yf.fract()));
        let v = |xx: usize, yy: usize| self.lattice[yy * p + xx];
        let top = v(x0, y0) * (1.0 - tx) + v(x1, y0) * tx;
        let bot = v(x0, y1) * (1.0 - tx) + v(x1, y1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Fractal sum of `octaves` octaves, normalised to roughly `[0, 1]`.
    fn fbm(&self, x: f32, y: f32, octaves: usize) -> f32 {
        let (mut amp, mut freq, mut sum, mut norm) = (1.0, 1.0, 0.0, 0.0);
        for _ in 0..octaves {
            sum += amp * self.at(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

fn lerp_color(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn jitter_color<R: Rng>(base: [f32; 3], amount: f32, rng: &mut R) -> [f32; 3] {
    base.map(|c| (c + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

/// Renders one procedural texture of the given class.
///
/// * stratified: warped parallel bands at a random orientation
/// * veined: light marble-like ground crossed by thin dark veins
/// * matted: dense tangle of short fibres over a noisy ground
pub fn procedural_texture(class: TextureClass, size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ValueNoise::new(16, &mut rng);
    let scale = 16.0 / size as f32;
    let mut img = RgbImage::new(size as u32, size as u32);
    match class {
        TextureClass::Stratified => {
            let angle = rng.random_range(-0.4f32..0.4);
            let (s, c) = angle.sin_cos();
            let period = rng.random_range(6.0f32..14.0);
            let dark = jitter_color([0.45, 0.32, 0.2], 0.08, &mut rng);
            let light = jitter_color([0.82, 0.7, 0.52], 0.08, &mut rng);
            for (x, y, px) in img.enumerate_pixels_mut() {
                let (xf, yf) = (x as f32, y as f32);
                let along = -s * xf + c * yf;
                let warp = 6.0 * noise.fbm(xf * scale, yf * scale, 3);
                let band = 0.5 + 0.5 * (std::f32::consts::TAU * (along + warp) / period).sin();
                let grain = 0.15 * (noise.at(xf * scale * 8.0, yf * scale * 8.0) - 0.5);
                let col = lerp_color(dark, light, band + grain);
                *px = to_rgb8(col);
            }
        }
        TextureClass::Veined => {
            let ground = jitter_color([0.85, 0.85, 0.88], 0.06, &mut rng);
            let shade = jitter_color([0.7, 0.7, 0.76], 0.06, &mut rng);
            let vein = jitter_color([0.15, 0.12, 0.2], 0.05, &mut rng);
            let freq = rng.random_range(0.03f32..0.06);
            let turb = rng.random_range(8.0f32..14.0);
            let angle = rng.random_range(0.0f32..std::f32::consts::PI);
            let (s, c) = angle.sin_cos();
            for (x, y, px) in img.enumerate_pixels_mut() {
                let (xf, yf) = (x as f32, y as f32);
                let t = c * xf + s * yf;
                let n = noise.fbm(xf * scale, yf * scale, 4);
                let v = (std::f32::consts::TAU * freq * t + turb * n).sin().abs();
                let base = lerp_color(ground, shade, noise.fbm(xf * scale * 2.0, yf * scale * 2.0, 2));
                let strength = (1.0 - v / 0.12).clamp(0.0, 1.0);
                *px = to_rgb8(lerp_color(base, vein, strength));
            }
        }
        TextureClass::Matted => {
            let ground = jitter_color([0.35, 0.42, 0.3], 0.06, &mut rng);
            let fibre = jitter_color([0.68, 0.72, 0.5], 0.06, &mut rng);
            let mut buf: Vec<[f32; 3]> = (0..size * size)
                .map(|i| {
                    let (x, y) = ((i % size) as f32, (i / size) as f32);
                    let n = noise.at(x * scale * 6.0, y * scale * 6.0);
                    lerp_color(ground, [0.2, 0.22, 0.18], n * 0.6)
                })
                .collect();
            let fibres = size * size / 12;
            for _ in 0..fibres {
                let (mut fx, mut fy) = (rng.random_range(0.0..size as f32), rng.random_range(0.0..size as f32));
                let mut dir = rng.random_range(0.0f32..std::f32::consts::TAU);
                let len = rng.random_range(4..10);
                let tone = rng.random_range(0.4f32..1.0);
                for _ in 0..len {
                    let (xi, yi) = (fx as usize % size, fy as usize % size);
                    buf[yi * size + xi] = lerp_color(buf[yi * size + xi], fibre, tone);
                    dir += rng.random_range(-0.6f32..0.6);
                    fx = (fx + dir.cos()).rem_euclid(size as f32);
                    fy = (fy + dir.sin()).rem_euclid(size as f32);
                }
            }
            for (x, y, px) in img.enumerate_pixels_mut() {
                *px = to_rgb8(buf[y as usize * size + x as usize]);
            }
        }
    }
    img
}

fn to_rgb8(c: [f32; 3]) -> image::Rgb<u8> {
    image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
}

/// Writes `per_class` procedural textures for each class under
/// `root/<class>/<class>_NNNN.png`; returns the written paths.
pub fn write_procedural_textures(root: &Path, per_class: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for class in TextureClass::ALL {
        let dir = root.join(class.name());
        fs::create_dir_all(&dir).at(&dir)?;
        for i in 0..per_class {
            let img = procedural_texture(class, size, derive_seed(seed, &[class as u64, i as u64]));
            let path = dir.join(format!("{}_{i:04}.png", class.name()));
            save_rgb(&img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
