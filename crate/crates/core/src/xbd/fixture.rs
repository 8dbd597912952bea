//! Small procedural stand-in for xBD: 1024×1024 scenes with rectangular
//! "buildings", pre/post images and polygon labels in the xBD JSON layout.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::polygon::{rasterize_labels, Annotation};
use super::tile::{SOURCE_SIZE, TILE_SIZE};
use crate::error::{IoContext, Result};
use crate::raster::{derive_seed, save_rgb, write_json_atomic};

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureConfig {
    pub sites: Vec<String>,
    pub sources_per_site: usize,
    pub test_sources_per_site: usize,
    /// Probability that a quadrant contains damaged buildings.
    pub damage_rate: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            sites: vec!["flood-alpha".into(), "fire-beta".into(), "storm-gamma".into()],
            sources_per_site: 4,
            test_sources_per_site: 1,
            damage_rate: 0.4,
            seed: 0,
        }
    }
}

struct Building {
    corners: Vec<[f64; 2]>,
    grade: u8,
    roof: [u8; 3],
}

fn subtype(grade: u8) -> &'static str {
    match grade {
        2 => "minor-damage",
        3 => "major-damage",
        4 => "destroyed",
        _ => "no-damage",
    }
}

fn wkt(corners: &[[f64; 2]]) -> String {
    let mut pts: Vec<String> = corners.iter().map(|p| format!("{:.2} {:.2}", p[0], p[1])).collect();
    pts.push(pts[0].clone());
    format!("POLYGON (({}))", pts.join(", "))
}

fn buildings(rng: &mut ChaCha8Rng, damage_rate: f64) -> Vec<Building> {
    let mut out = Vec::new();
    for q in 0..4 {
        let (qx, qy) = ((q % 2 * TILE_SIZE) as f64, (q / 2 * TILE_SIZE) as f64);
        let damaged = rng.random_bool(damage_rate);
        let count = rng.random_range(3..7);
        for b in 0..count {
            let (w, h) = (rng.random_range(30.0..90.0), rng.random_range(30.0..90.0));
            let margin = 60.0;
            let cx = qx + rng.random_range(margin..TILE_SIZE as f64 - margin);
            let cy = qy + rng.random_range(margin..TILE_SIZE as f64 - margin);
            let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (c, s) = (a.cos(), a.sin());
            let corners = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]
                .iter()
                .map(|p| {
                    let (dx, dy) = (p[0] * w, p[1] * h);
                    [cx + dx * c - dy * s, cy + dx * s + dy * c]
                })
                .collect();
            let grade = if damaged && (b == 0 || rng.random_bool(0.6)) {
                rng.random_range(2..=4)
            } else {
                1
            };
            let g = rng.random_range(150..220u8);
            out.push(Building {
                corners,
                grade,
                roof: [g, g.saturating_sub(rng.random_range(0..30)), g.saturating_sub(rng.random_range(0..50))],
            });
        }
    }
    out
}

fn ground(x: u32, y: u32, phase: f64, tint: [f64; 3]) -> [f64; 3] {
    let (fx, fy) = (x as f64 / 37.0, y as f64 / 53.0);
    let v = 0.5 + 0.25 * (fx + phase).sin() * (fy - phase).cos() + 0.15 * ((fx + fy) * 0.7).sin();
    [tint[0] * v, tint[1] * v, tint[2] * v]
}

fn render(buildings: &[Building], post: bool, rng: &mut ChaCha8Rng) -> RgbImage {
    let polys: Vec<Annotation> = buildings
        .iter()
        .enumerate()
        .map(|(i, b)| Annotation {
            grade: (i + 1) as u8,
            rings: vec![b.corners.clone()],
        })
        .collect();
    let owner = rasterize_labels(&polys, SOURCE_SIZE, SOURCE_SIZE);
    let phase = rng.random_range(0.0..6.0);
    let tint = if post { [150.0, 140.0, 110.0] } else { [120.0, 150.0, 100.0] };
    let mut img = RgbImage::new(SOURCE_SIZE as u32, SOURCE_SIZE as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let o = owner.get(x as usize, y as usize);
        let jitter: f64 = rng.random_range(-8.0..8.0);
        let mut c = ground(x, y, phase, tint);
        if o > 0 {
            let b = &buildings[o as usize - 1];
            c = b.roof.map(f64::from);
            if post && b.grade >= 2 {
                // Rubble density grows with the grade.
                let p = [0.0, 0.0, 0.35, 0.7, 0.95][b.grade as usize];
                if rng.random_bool(p) {
                    c = [90.0, 70.0, 50.0];
                }
            }
        }
        *px = Rgb(c.map(|v| (v + jitter).clamp(0.0, 255.0) as u8));
    }
    img
}

fn label_doc(buildings: &[Building], post: bool) -> serde_json::Value {
    let xy: Vec<_> = buildings
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut props = json!({"feature_type": "building", "uid": format!("b{i}")});
            if post {
                props["subtype"] = json!(subtype(b.grade));
            }
            json!({"properties": props, "wkt": wkt(&b.corners)})
        })
        .collect();
    json!({"features": {"xy": xy}, "metadata": {"width": SOURCE_SIZE, "height": SOURCE_SIZE}})
}

fn write_split(dir: &Path, config: &FixtureConfig, per_site: usize, split: u64) -> Result<usize> {
    let (images, labels) = (dir.join("images"), dir.join("labels"));
    fs::create_dir_all(&images).at(&images)?;
    fs::create_dir_all(&labels).at(&labels)?;
    let mut n = 0;
    for (s, site) in config.sites.iter().enumerate() {
        for i in 0..per_site {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[split, s as u64, i as u64]));
            let b = buildings(&mut rng, config.damage_rate);
            let stem = format!("{site}_{:08}", i);
            for (post, tag) in [(false, "pre"), (true, "post")] {
                let name = format!("{stem}_{tag}_disaster");
                save_rgb(&render(&b, post, &mut rng), &images.join(format!("{name}.png")))?;
                write_json_atomic(&labels.join(format!("{name}.json")), &label_doc(&b, post))?;
            }
            n += 1;
        }
    }
    Ok(n)
}

/// Writes the fixture in the xBD directory convention; test scenes go under
/// `dir/test`. Returns the number of scenes written.
pub fn write_fixture(dir: &Path, config: &FixtureConfig) -> Result<usize> {
    let n = write_split(dir, config, config.sources_per_site, 0)?;
    let t = if config.test_sources_per_site > 0 {
        write_split(&dir.join("test"), config, config.test_sources_per_site, 1)?
    } else {
        0
    };
    Ok(n + t)
}
