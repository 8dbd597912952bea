use std::collections::BTreeSet;

use image::RgbImage;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::VoronoiLayout;
use super::texture::Texture;
use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Label value written on replaced cells of the noisy label.
pub const NOISE_CLASS: u8 = 2;

/// Whether replaced cells become their own downstream class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Replaced cells are labelled [`NOISE_CLASS`] (three-class task).
    #[default]
    Relevant,
    /// Replaced cells keep their original class; the noise texture is not a
    /// downstream class.
    Irrelevant,
}

/// Top-left corner of a crop window inside a texture image.
pub type Window = [u32; 2];

/// Clean composed image with its binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct Composed {
    pub image: RgbImage,
    pub label: LabelMap,
    pub windows: [Window; 2],
}

fn random_window<R: Rng>(texture: &Texture, size: u32, rng: &mut R) -> Result<Window> {
    let (w, h) = texture.image.dimensions();
    if w < size || h < size {
        return Err(Error::TextureTooSmall {
            path: texture.name.clone(),
            width: w,
            height: h,
            needed: size,
        });
    }
    Ok([rng.random_range(0..=w - size), rng.random_range(0..=h - size)])
}

/// Fills every cell with the texture of its class. One crop window is drawn
/// per texture and shared by all cells of that class.
pub fn compose_image<R: Rng>(
    layout: &VoronoiLayout,
    texture_a: &Texture,
    texture_b: &Texture,
    rng: &mut R,
) -> Result<Composed> {
    let size = layout.image_size() as u32;
    let windows = [
        random_window(texture_a, size, rng)?,
        random_window(texture_b, size, rng)?,
    ];
    let n = layout.image_size();
    let mut image = RgbImage::new(size, size);
    let mut label = LabelMap::filled(n, n, 0);
    for y in 0..n {
        for x in 0..n {
            let class = layout.class_at(x, y);
            let (tex, win) = if class == 0 {
                (texture_a, windows[0])
            } else {
                (texture_b, windows[1])
            };
            let px = *tex.image.get_pixel(win[0] + x as u32, win[1] + y as u32);
            image.put_pixel(x as u32, y as u32, px);
            label.set(x, y, class);
        }
    }
    Ok(Composed {
        image,
        label,
        windows,
    })
}

/// Number of cells replaced for a per-image noise fraction (round half up).
pub fn replaced_cell_count(r_img: f64, n_cells: usize) -> usize {
    // The small bias absorbs representation error, e.g. 0.075 · 20 = 1.4999…
    ((r_img * n_cells as f64) + 0.5 + 1e-9).floor() as usize
}

/// A clean image, its noisy partner and both labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VtsSample {
    pub clean_image: RgbImage,
    pub noisy_image: RgbImage,
    pub clean_label: LabelMap,
    pub noisy_label: LabelMap,
    pub replaced_cells: BTreeSet<u16>,
    pub r_img: f64,
    pub rng_seed: u64,
    pub noise_window: Window,
    pub noise_mode: NoiseMode,
}

/// Overwrites `round(r_img · n_cells)` uniformly chosen cells (class balance
/// ignored) with the noise texture.
pub fn inject_noise(
    clean: &Composed,
    layout: &VoronoiLayout,
    noise_texture: &Texture,
    r_img: f64,
    rng_seed: u64,
    mode: NoiseMode,
) -> Result<VtsSample> {
    if !(0.0..=1.0).contains(&r_img) {
        return Err(Error::InvalidArgument(format!("r_img {r_img} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let size = layout.image_size() as u32;
    let noise_window = random_window(noise_texture, size, &mut rng)?;
    let n_cells = layout.n_cells();
    let k = replaced_cell_count(r_img, n_cells).min(n_cells);
    let replaced: BTreeSet<u16> = index::sample(&mut rng, n_cells, k)
        .into_iter()
        .map(|i| i as u16)
        .collect();
    let mut noisy_image = clean.image.clone();
    let mut noisy_label = clean.label.clone();
    let n = layout.image_size();
    for y in 0..n {
        for x in 0..n {
            if replaced.contains(&layout.cell_at(x, y)) {
                let px = *noise_texture
                    .image
                    .get_pixel(noise_window[0] + x as u32, noise_window[1] + y as u32);
                noisy_image.put_pixel(x as u32, y as u32, px);
                if mode == NoiseMode::Relevant {
                    noisy_label.set(x, y, NOISE_CLASS);
                }
            }
        }
    }
    Ok(VtsSample {
        clean_image: clean.image.clone(),
        noisy_image,
        clean_label: clean.label.clone(),
        noisy_label,
        replaced_cells: replaced,
        r_img,
        rng_seed,
        noise_window,
        noise_mode: mode,
    })
}

/// Checks every per-sample invariant against the layout; returns a
/// description of the first violation.
pub fn check_sample(sample: &VtsSample, layout: &VoronoiLayout) -> std::result::Result<(), String> {
    let n = layout.image_size();
    let want = replaced_cell_count(sample.r_img, layout.n_cells()).min(layout.n_cells());
    if sample.replaced_cells.len() != want {
        return Err(format!(
            "{} replaced cells, expected {want}",
            sample.replaced_cells.len()
        ));
    }
    let mut noise_pixels = 0usize;
    for y in 0..n {
        for x in 0..n {
            let cell = layout.cell_at(x, y);
            let replaced = sample.replaced_cells.contains(&cell);
            let clean_px = sample.clean_image.get_pixel(x as u32, y as u32);
            let noisy_px = sample.noisy_image.get_pixel(x as u32, y as u32);
            let class = layout.class_at(x, y);
            if sample.clean_label.get(x, y) != class {
                return Err(format!("clean label wrong at ({x},{y})"));
            }
            let expected_noisy = match (replaced, sample.noise_mode) {
                (true, NoiseMode::Relevant) => NOISE_CLASS,
                _ => class,
            };
            if sample.noisy_label.get(x, y) != expected_noisy {
                return Err(format!("noisy label wrong at ({x},{y})"));
            }
            if !replaced && clean_px != noisy_px {
                return Err(format!("noisy image differs off replaced cells at ({x},{y})"));
            }
            if sample.noisy_label.get(x, y) == NOISE_CLASS {
                noise_pixels += 1;
            }
        }
    }
    if sample.noise_mode == NoiseMode::Relevant {
        let counts = layout.cell_pixel_counts();
        let replaced_area: usize = sample
            .replaced_cells
            .iter()
            .map(|&c| counts[c as usize])
            .sum();
        if replaced_area != noise_pixels {
            return Err(format!(
                "{noise_pixels} noise-labelled pixels but replaced cells cover {replaced_area}"
            ));
        }
    }
    Ok(())
}
