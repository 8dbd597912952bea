//! Image and label containers plus PNG/JSON helpers shared by the pipelines.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};

/// Per-pixel class map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        LabelMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} label values for a {width}x{height} map",
                data.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel counts for classes `0..classes`; larger values are ignored.
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; classes];
        for &v in &self.data {
            if (v as usize) < classes {
                h[v as usize] += 1;
            }
        }
        h
    }

    pub fn max_value(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Crops the window `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LabelMap {
        let mut out = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            out.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        LabelMap {
            width: w,
            height: h,
            data: out,
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                out.push(self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        LabelMap {
            width,
            height,
            data: out,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("label buffer matches its dimensions")
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        LabelMap {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().clone(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path).at(path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).at(path)?.into_luma8();
        Ok(Self::from_gray(&img))
    }
}

/// Planar (CHW) float image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FloatImage {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = FloatImage::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.data[(c * h + y as usize) * w + x as usize] = px.0[c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut px = [0u8; 3];
                for (c, v) in px.iter_mut().enumerate().take(self.channels.min(3)) {
                    *v = (self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample with clamp-to-edge addressing.
    pub fn sample_bilinear(&self, c: usize, y: f32, x: f32) -> f32 {
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
        let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> FloatImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = FloatImage::zeros(self.channels, height, width);
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let v = self.sample_bilinear(
                        c,
                        (y as f32 + 0.5) * sy - 0.5,
                        (x as f32 + 0.5) * sx - 0.5,
                    );
                    out.data[(c * height + y) * width + x] = v;
                }
            }
        }
        out
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).at(path)?.into_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).at(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).at(path)
}

/// Writes pretty JSON through a temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).at(path)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed and a path of
/// integers (split id, sample index, worker id, ...).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, p| mix(acc ^ mix(*p)))
}
