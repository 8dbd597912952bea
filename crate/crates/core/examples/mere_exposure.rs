//! Noisy pairs against the mere-exposure control on a tiny VTS set: the same
//! images are seen either way, only the pairing differs.
//!
//! cargo run --release --example mere_exposure -- --loss moco --epochs 5

use anyhow::Result;
use clap::Parser;
use noisypairs::pairing::PairingMode;
use noisypairs::training::{finetune, pretrain, DatasetKind, ExperimentConfig, LossKind};
use noisypairs::vts::{generate_dataset, write_procedural_textures, GeneratorConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "moco")]
    loss: String,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    r_pairs: f64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let tmp = tempfile::tempdir()?;
    write_procedural_textures(&tmp.path().join("textures"), 6, 96, 0)?;
    let mut gen = GeneratorConfig::desk(tmp.path().join("textures"), 0.5, 0);
    (gen.n_train, gen.n_val, gen.n_test) = (64, 24, 16);
    generate_dataset(&gen, &tmp.path().join("vts"))?;

    let mut f1 = Vec::new();
    for mode in [PairingMode::Noisy, PairingMode::MereExposure] {
        let mut c = ExperimentConfig::desk(DatasetKind::Vts, tmp.path().join("vts"), LossKind::parse(&args.loss)?);
        c.r_pairs = args.r_pairs;
        c.pairing_mode = mode;
        c.pretrain.epochs = args.epochs;
        c.pretrain.batch_size = 32;
        c.moco.queue_size = 128;
        c.finetune.epochs = 5;
        let out = tmp.path().join(mode.name());
        let pre = pretrain(&c, &out)?;
        let ft = finetune(&pre.checkpoint, None)?;
        println!(
            "{mode:14} best epoch {}, val loss {:.4}, test macro F1 {:.4}",
            pre.checkpoint.epoch, pre.checkpoint.best_val_loss, ft.metrics.macro_f1
        );
        f1.push(ft.metrics.macro_f1);
    }
    println!("noisy minus mere exposure: {:+.2} points", 100.0 * (f1[0] - f1[1]));
    Ok(())
}
