//! Draw augmented positive pairs from one generated sample and write a few of
//! them out as PNG strips.
//!
//! cargo run --release --example pairing -- --out /tmp/pairs

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use image::RgbImage;
use noisypairs::pairing::{sample_pair_vts, AugmentConfig, PairSource, PairingMode};
use noisypairs::raster::FloatImage;
use noisypairs::vts::{generate_sample, write_procedural_textures, GeneratorConfig, Split, SplitTextures, TextureBank};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
struct Args {
    /// Where to write example pairs; nothing is written when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    r_pairs: f64,
}

fn strip(a: &RgbImage, b: &RgbImage) -> RgbImage {
    let (w, h) = a.dimensions();
    let mut out = RgbImage::new(w * 2 + 4, h);
    image::imageops::replace(&mut out, a, 0, 0);
    image::imageops::replace(&mut out, b, (w + 4) as i64, 0);
    out
}

fn main() -> Result<()> {
    let args = Args::parse();
    let tmp = tempfile::tempdir()?;
    write_procedural_textures(tmp.path(), 4, 128, 0)?;
    let config = GeneratorConfig::desk(tmp.path(), 0.5, 0);
    let bank = TextureBank::from_dir(tmp.path(), config.split_ratios, 0)?;
    let tex = SplitTextures::load(&bank, tmp.path(), Split::Train)?;
    let (_, sample, _) = generate_sample(&config, &tex, Split::Train, 0)?;
    let source = PairSource {
        id: "train_00000".into(),
        first: FloatImage::from_rgb(&sample.clean_image),
        second: FloatImage::from_rgb(&sample.noisy_image),
        label: sample.clean_label.clone(),
        noisy: false,
    };

    let aug = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [PairingMode::Noisy, PairingMode::MereExposure] {
        let mut kinds = BTreeMap::new();
        for i in 0..1000 {
            let pair = sample_pair_vts(&source, args.r_pairs, mode, &aug, &mut rng)?;
            *kinds.entry(pair.plan.kind.name()).or_insert(0) += 1;
            if let (Some(dir), true) = (&args.out, i < 4) {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{mode}_{i}_{}.png", pair.plan.kind));
                strip(&pair.view_a.to_rgb(), &pair.view_b.to_rgb()).save(&path)?;
            }
        }
        println!("{mode:14} r_pairs {}: {kinds:?}", args.r_pairs);
    }
    Ok(())
}
