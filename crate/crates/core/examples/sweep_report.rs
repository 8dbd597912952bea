//! A miniature sweep: two noisy-pair rates under both pairing modes, then
//! the CSV tables and SVG plots of the report. Rerunning with the same
//! `--out` skips finished cells.
//!
//! cargo run --release --example sweep_report -- --out /tmp/mini-sweep

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use noisypairs::experiments::{
    compute_deltas, ensure_vts_datasets, render_report, run_sweep, DataLocator, SweepGrid, TrainingRunner, REPORT_DIR,
};
use noisypairs::pairing::PairingMode;
use noisypairs::training::{DatasetKind, ExperimentConfig, LossKind};
use noisypairs::vts::{write_procedural_textures, GeneratorConfig};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    std::fs::create_dir_all(&args.out)?;
    let root = args.out.canonicalize()?;
    let textures = root.join("textures");
    if !textures.exists() {
        write_procedural_textures(&textures, 6, 96, 0)?;
    }
    let mut gen = GeneratorConfig::desk(&textures, 0.0, 0);
    (gen.n_train, gen.n_val, gen.n_test) = (48, 16, 16);
    ensure_vts_datasets(&gen, &root.join("vts"), &[0.5])?;

    let mut base = ExperimentConfig::desk(DatasetKind::Vts, root.join("vts"), LossKind::Moco);
    base.pretrain.epochs = args.epochs;
    base.pretrain.batch_size = 16;
    base.moco.queue_size = 64;
    base.finetune.epochs = 3;
    base.finetune.lr_grid = vec![0.1];
    let runner = TrainingRunner {
        base,
        data: DataLocator::VtsByRImg(root.join("vts")),
    };
    let grid = SweepGrid {
        dataset: DatasetKind::Vts,
        losses: vec![LossKind::Moco, LossKind::WithinImage],
        r_pairs: vec![0.0, 1.0],
        r_img: vec![0.5],
        modes: vec![PairingMode::Noisy, PairingMode::MereExposure],
        seeds: vec![0],
    };
    let run = root.join("run");
    let summary = run_sweep(&grid.cells(), &runner, &run)?;
    println!("{} trained, {} reused, {} failed", summary.trained, summary.skipped, summary.failures.len());
    for r in &summary.records {
        println!("{:45} macro F1 {:.4}", r.key.slug(), r.macro_f1);
    }

    let deltas = compute_deltas(&summary.records);
    for s in &deltas.stats {
        println!("{}: mean delta {:+.2} pp, std {:.2} pp over {} cells", s.loss, s.mean_pp, s.std_pp, s.cells);
    }
    for path in render_report(&summary.records, &deltas, &run.join(REPORT_DIR))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
