//! Augmentation chain: random resized crop, flips and small rotations shared
//! by an image and its label map, then photometric jitter and blur on the
//! image alone.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{FloatImage, LabelMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Output side length; `None` keeps the input size.
    pub out_size: Option<usize>,
    /// Lower bound on the crop's area fraction; 1 disables cropping.
    pub crop_scale_min: f64,
    pub hflip: bool,
    pub vflip: bool,
    pub max_rotation_deg: f64,
    pub jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub blur_prob: f64,
    pub blur_sigma: [f64; 2],
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            out_size: None,
            crop_scale_min: 1.0,
            hflip: false,
            vflip: false,
            max_rotation_deg: 0.0,
            jitter_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            blur_prob: 0.0,
            blur_sigma: [0.1, 1.0],
        }
    }

    pub fn flips_only() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            ..Self::identity()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_scale_min >= 1.0
            && !self.hflip
            && !self.vflip
            && self.max_rotation_deg == 0.0
            && (self.jitter_prob == 0.0 || (self.brightness, self.contrast, self.saturation) == (0.0, 0.0, 0.0))
            && self.blur_prob == 0.0
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            out_size: None,
            crop_scale_min: 0.8,
            hflip: true,
            vflip: true,
            max_rotation_deg: 10.0,
            jitter_prob: 0.8,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.2,
            blur_prob: 0.3,
            blur_sigma: [0.1, 1.0],
        }
    }
}

/// Maps output pixels back to continuous source coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricTransform {
    pub src_size: [usize; 2],
    pub out_size: [usize; 2],
    /// Crop window `[x0, y0, w, h]` in source pixels.
    pub crop: [f64; 4],
    pub hflip: bool,
    pub vflip: bool,
    pub angle: f64,
}

impl GeometricTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        GeometricTransform {
            src_size: [width, height],
            out_size: [width, height],
            crop: [0.0, 0.0, width as f64, height as f64],
            hflip: false,
            vflip: false,
            angle: 0.0,
        }
    }

    pub fn sample<R: Rng>(config: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let out = config.out_size.map_or([width, height], |s| [s, s]);
        let (w, h) = (width as f64, height as f64);
        let mut crop = [0.0, 0.0, w, h];
        if config.crop_scale_min < 1.0 {
            let scale = rng.random_range(config.crop_scale_min.max(0.01)..=1.0);
            let ratio = (rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln())).exp();
            let cw = (w * (scale * ratio).sqrt()).min(w);
            let ch = (h * (scale / ratio).sqrt()).min(h);
            crop = [rng.random_range(0.0..=w - cw), rng.random_range(0.0..=h - ch), cw, ch];
        }
        let hflip = config.hflip && rng.random_bool(0.5);
        let vflip = config.vflip && rng.random_bool(0.5);
        let angle = if config.max_rotation_deg > 0.0 {
            rng.random_range(-config.max_rotation_deg..=config.max_rotation_deg).to_radians()
        } else {
            0.0
        };
        GeometricTransform {
            src_size: [width, height],
            out_size: out,
            crop,
            hflip,
            vflip,
            angle,
        }
    }

    /// Continuous source position of output pixel `(u, v)`'s centre.
    pub fn source_coord(&self, u: usize, v: usize) -> (f64, f64) {
        let mut tx = (u as f64 + 0.5) / self.out_size[0] as f64;
        let mut ty = (v as f64 + 0.5) / self.out_size[1] as f64;
        if self.hflip {
            tx = 1.0 - tx;
        }
        if self.vflip {
            ty = 1.0 - ty;
        }
        let [x0, y0, cw, ch] = self.crop;
        let (dx, dy) = ((tx - 0.5) * cw, (ty - 0.5) * ch);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        (x0 + cw / 2.0 + dx * c - dy * s, y0 + ch / 2.0 + dx * s + dy * c)
    }

    pub fn apply_image(&self, img: &FloatImage) -> FloatImage {
        let [ow, oh] = self.out_size;
        let mut out = FloatImage::zeros(img.channels, oh, ow);
        for v in 0..oh {
            for u in 0..ow {
                let (sx, sy) = self.source_coord(u, v);
                for c in 0..img.channels {
                    out.data[(c * oh + v) * ow + u] = img.sample_bilinear(c, (sy - 0.5) as f32, (sx - 0.5) as f32);
                }
            }
        }
        out
    }

    /// Nearest-neighbour: output pixel takes the label of the source pixel
    /// containing its back-projected centre.
    pub fn apply_label(&self, label: &LabelMap) -> LabelMap {
        let [ow, oh] = self.out_size;
        let mut out = LabelMap::filled(ow, oh, 0);
        for v in 0..oh {
            for u in 0..ow {
                let (x, y) = self.label_source(u, v);
                out.set(u, v, label.get(x, y));
            }
        }
        out
    }

    pub fn label_source(&self, u: usize, v: usize) -> (usize, usize) {
        let (sx, sy) = self.source_coord(u, v);
        let clampi = |p: f64, n: usize| (p.floor().max(0.0) as usize).min(n - 1);
        (clampi(sx, self.src_size[0]), clampi(sy, self.src_size[1]))
    }
}

fn luma(img: &FloatImage, i: usize) -> f32 {
    let n = img.height * img.width;
    if img.channels < 3 {
        return img.data[i];
    }
    0.299 * img.data[i] + 0.587 * img.data[n + i] + 0.114 * img.data[2 * n + i]
}

fn color_jitter<R: Rng>(img: &mut FloatImage, config: &AugmentConfig, rng: &mut R) {
    let factor = |s: f64, rng: &mut R| if s > 0.0 { rng.random_range(1.0 - s..=1.0 + s) as f32 } else { 1.0 };
    let b = factor(config.brightness, rng);
    let c = factor(config.contrast, rng);
    let s = factor(config.saturation, rng);
    let n = img.height * img.width;
    for v in img.data.iter_mut() {
        *v *= b;
    }
    let mean = (0..n).map(|i| luma(img, i)).sum::<f32>() / n as f32;
    for v in img.data.iter_mut() {
        *v = (*v - mean) * c + mean;
    }
    if img.channels >= 3 {
        for i in 0..n {
            let g = luma(img, i);
            for ch in 0..3 {
                let v = &mut img.data[ch * n + i];
                *v = g + (*v - g) * s;
            }
        }
    }
    for v in img.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &FloatImage, sigma: f64) -> FloatImage {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = kernel.iter().sum();
    let (h, w) = (img.height as isize, img.width as isize);
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = tmp.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let xx = (x + k as isize - radius).clamp(0, w - 1);
                    acc += wgt * src[(y * w + xx) as usize];
                }
                dst[(y * w + x) as usize] = acc / norm;
            }
        }
        let src = tmp.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let yy = (y + k as isize - radius).clamp(0, h - 1);
                    acc += wgt * src[(yy * w + x) as usize];
                }
                dst[(y * w + x) as usize] = acc / norm;
            }
        }
    }
    out
}

/// Augments an image and, if given, its label with the same geometry.
pub fn augment<R: Rng>(
    image: &FloatImage,
    label: Option<&LabelMap>,
    config: &AugmentConfig,
    rng: &mut R,
) -> (FloatImage, Option<LabelMap>) {
    let t = GeometricTransform::sample(config, image.width, image.height, rng);
    let geometric_noop = t == GeometricTransform::identity(image.width, image.height);
    let mut out = if geometric_noop { image.clone() } else { t.apply_image(image) };
    let label = label.map(|l| if geometric_noop { l.clone() } else { t.apply_label(l) });
    if config.jitter_prob > 0.0 && rng.random_bool(config.jitter_prob.min(1.0)) {
        color_jitter(&mut out, config, rng);
    }
    if config.blur_prob > 0.0 && rng.random_bool(config.blur_prob.min(1.0)) {
        let sigma = rng.random_range(config.blur_sigma[0]..=config.blur_sigma[1]);
        out = gaussian_blur(&out, sigma);
    }
    (out, label)
}
