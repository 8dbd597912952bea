//! Pretrain one encoder on a freshly generated VTS dataset, then finetune a
//! segmentation head on top of it and print the test F1.
//!
//! cargo run --release --example pretrain_finetune -- --loss moco --epochs 2 --train 64

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::Parser;
use noisypairs::training::{finetune, pretrain, DatasetKind, ExperimentConfig, LossKind};
use noisypairs::vts::{generate_dataset, write_procedural_textures, GeneratorConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "moco")]
    loss: String,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// Training images; validation and test sets scale with it.
    #[arg(long, default_value_t = 64)]
    train: usize,
    #[arg(long, default_value_t = 0.5)]
    r_pairs: f64,
    #[arg(long, default_value_t = 0.5)]
    r_img: f64,
    #[arg(long, default_value_t = 5)]
    finetune_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Work directory; a temporary one when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let tmp = tempfile::tempdir()?;
    let root = args.out.clone().unwrap_or_else(|| tmp.path().to_path_buf());

    let textures = root.join("textures");
    write_procedural_textures(&textures, 10, 128, args.seed)?;
    let mut gen = GeneratorConfig::desk(&textures, args.r_img, args.seed);
    gen.n_train = args.train;
    gen.n_val = (args.train * 3 / 5).max(8);
    gen.n_test = (args.train * 2 / 5).max(8);
    let data = root.join("vts");
    generate_dataset(&gen, &data)?;

    let mut config = ExperimentConfig::desk(DatasetKind::Vts, &data, LossKind::parse(&args.loss)?);
    config.r_pairs = args.r_pairs;
    config.r_img = Some(args.r_img);
    config.pretrain.epochs = args.epochs;
    config.pretrain.batch_size = config.pretrain.batch_size.min(args.train);
    config.finetune.epochs = args.finetune_epochs;
    config.seed = args.seed;

    let t = Instant::now();
    let run = root.join("run");
    let out = pretrain(&config, &run)?;
    for e in &out.history {
        println!("epoch {:2}  train {:.4}  val {:.4}  lr {:.4}", e.epoch, e.train_loss, e.val_loss, e.lr);
    }
    println!("best epoch {} ({:.1}s)", out.checkpoint.epoch, t.elapsed().as_secs_f64());

    let ft = finetune(&out.checkpoint, Some(&run))?;
    for trial in &ft.metrics.lr_trials {
        println!("lr {:<6} val macro F1 {:.4}", trial.lr, trial.val_macro_f1);
    }
    println!("test macro F1 {:.4} at lr {}", ft.metrics.macro_f1, ft.metrics.lr);
    for (c, f) in &ft.metrics.per_class_f1 {
        match f {
            Some(f) => println!("  class {c}: {f:.4}"),
            None => println!("  class {c}: absent"),
        }
    }
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
