//! Generate a small Voronoi texture segmentation dataset, then re-verify
//! every sample from disk.
//!
//! cargo run --release --example generate_vts -- --out /tmp/vts --r-img 0.25

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;
use noisypairs::vts::{generate_dataset, verify_dataset, write_procedural_textures, GeneratorConfig, Split};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    r_img: f64,
    #[arg(long, default_value_t = 40)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let textures = args.out.join("textures");
    let files = write_procedural_textures(&textures, 10, 128, args.seed)?;
    println!("{} textures in {}", files.len(), textures.display());

    let mut config = GeneratorConfig::desk(&textures, args.r_img, args.seed);
    config.n_train = args.train;
    config.n_val = args.train / 2;
    config.n_test = args.train / 2;
    let data = args.out.join("data");
    let manifest = generate_dataset(&config, &data)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!(
            "{:5} {:4} images, r_img {}",
            split.name(),
            config.count(split),
            config.r_img_for(split)
        );
    }
    println!("written: {:?}", manifest.counts);

    let report = verify_dataset(&data)?;
    if !report.violations.is_empty() {
        bail!("{} violations, first: {}", report.violations.len(), report.violations[0]);
    }
    println!("verified {} samples under {}", report.samples, data.display());
    Ok(())
}
