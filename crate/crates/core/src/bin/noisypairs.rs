use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use noisypairs::experiments::{
    collect_run, compute_deltas, ensure_vts_datasets, render_report, run_sweep, DataLocator, SweepGrid,
    TrainingRunner, DEFAULT_R_IMG, DEFAULT_R_PAIRS, REPORT_DIR,
};
use noisypairs::pairing::PairingMode;
use noisypairs::raster::{read_json, write_json_atomic};
use noisypairs::training::{finetune, pretrain, DatasetKind, ExperimentConfig, LossKind};
use noisypairs::vts::{
    generate_dataset, generate_irrelevant_noise_dataset, verify_dataset, write_procedural_textures, GeneratorConfig,
};
use noisypairs::xbd::{ingest, write_fixture, FixtureConfig, IngestConfig, DEFAULT_TRAIN_RATIO};

#[derive(Parser)]
#[command(name = "noisypairs", version, about = "Contrastive pretraining with noisy positive pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic Voronoi texture segmentation data.
    #[command(subcommand)]
    Vts(VtsCommand),
    /// xBD preprocessing.
    #[command(subcommand)]
    Xbd(XbdCommand),
    /// Pretrain and finetune a single configuration.
    Train(TrainArgs),
    /// Run a grid of experiments into a run directory.
    Sweep(SweepArgs),
    /// Tables and plots for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum VtsCommand {
    /// Write procedural stand-ins for the three texture classes.
    Textures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Generate(GenerateArgs),
    /// Re-check every stored sample against its manifest.
    Verify { data: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory with `stratified/`, `veined/` and `matted/` subdirectories.
    #[arg(long)]
    textures: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    r_img: f64,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Replaced cells keep their original label.
    #[arg(long = "irrelevant-noise")]
    irrelevant: bool,
}

impl GenerateArgs {
    fn config(&self, r_img: f64) -> GeneratorConfig {
        let mut c = match self.preset {
            Preset::Desk => GeneratorConfig::desk(&self.textures, r_img, self.seed),
            Preset::Paper => GeneratorConfig::paper(&self.textures, r_img, self.seed),
        };
        c.n_train = self.n_train.unwrap_or(c.n_train);
        c.n_val = self.n_val.unwrap_or(c.n_val);
        c.n_test = self.n_test.unwrap_or(c.n_test);
        c.image_size = self.image_size.unwrap_or(c.image_size);
        c
    }
}

#[derive(Subcommand)]
enum XbdCommand {
    /// Tile, label, split and undersample an xBD-format directory.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        r_pairs: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
        train_ratio: f64,
    },
    /// Write a small procedural directory in xBD layout.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        per_site: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct BaseArgs {
    #[arg(long, value_parser = parse_dataset)]
    dataset: DatasetKind,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Full experiment config as JSON; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    finetune_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl BaseArgs {
    fn config(&self, data_dir: &Path) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => read_json::<ExperimentConfig>(p)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(self.dataset, data_dir, LossKind::Moco),
                Preset::Paper => ExperimentConfig::paper(self.dataset, data_dir, LossKind::Moco),
            },
        };
        if c.dataset != self.dataset {
            bail!("config is for {} but --dataset is {}", c.dataset, self.dataset);
        }
        c.data_dir = data_dir.to_path_buf();
        if let Some(e) = self.epochs {
            c.pretrain.epochs = e;
        }
        if let Some(e) = self.finetune_epochs {
            c.finetune.epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.pretrain.batch_size = b;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_loss, default_value = "moco")]
    loss: LossKind,
    #[arg(long, default_value_t = 0.0)]
    r_pairs: f64,
    /// Must match the dataset; VTS only.
    #[arg(long)]
    r_img: Option<f64>,
    #[arg(long, value_parser = parse_mode, default_value = "noisy")]
    mode: PairingMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: BaseArgs,
    /// xBD: the ingested directory. VTS: a root holding one dataset per
    /// r_img in `r_img_<value>/`.
    #[arg(long)]
    data: PathBuf,
    /// Generate missing VTS datasets from these textures.
    #[arg(long)]
    textures: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_delimiter = ',', value_parser = parse_loss, default_value = "moco,within_image,cross_image")]
    losses: Vec<LossKind>,
    #[arg(long, value_delimiter = ',')]
    r_pairs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    r_img: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "noisy,mere_exposure")]
    modes: Vec<PairingMode>,
    /// Replicates per cell, seeds 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).map_err(|e| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).map_err(|e| e.to_string())
}

fn parse_mode(s: &str) -> Result<PairingMode, String> {
    PairingMode::parse(s).map_err(|e| e.to_string())
}

fn vts(cmd: VtsCommand) -> Result<()> {
    match cmd {
        VtsCommand::Textures {
            out,
            per_class,
            size,
            seed,
        } => {
            let n = write_procedural_textures(&out, per_class, size, seed)?.len();
            println!("wrote {n} textures to {}", out.display());
        }
        VtsCommand::Generate(args) => {
            let config = args.config(args.r_img);
            let m = if args.irrelevant {
                generate_irrelevant_noise_dataset(&config, &args.out)?
            } else {
                generate_dataset(&config, &args.out)?
            };
            for (split, n) in &m.counts {
                println!("{}: {n}", split.name());
            }
        }
        VtsCommand::Verify { data } => {
            let report = verify_dataset(&data)?;
            for v in &report.violations {
                println!("{v}");
            }
            println!("{} samples, {} violations", report.samples, report.violations.len());
            if !report.violations.is_empty() {
                bail!("dataset {} failed verification", data.display());
            }
        }
    }
    Ok(())
}

fn xbd(cmd: XbdCommand) -> Result<()> {
    match cmd {
        XbdCommand::Ingest {
            input,
            out,
            r_pairs,
            seed,
            train_ratio,
        } => {
            let config = IngestConfig {
                train_ratio,
                ..IngestConfig::new(r_pairs, seed)
            };
            let m = ingest(&input, &out, &config)?;
            println!(
                "clean {} noisy {} (rate {:.3}); train {} val {} test {}; {} polygons skipped",
                m.clean_pairs.len(),
                m.noisy_pairs.len(),
                m.noisy_rate(),
                m.train_pairs.len(),
                m.val_pairs.len(),
                m.test_pairs.len(),
                m.skipped_polygons
            );
        }
        XbdCommand::Fixture { out, per_site, seed } => {
            let config = FixtureConfig {
                sources_per_site: per_site,
                seed,
                ..FixtureConfig::default()
            };
            let n = write_fixture(&out, &config)?;
            println!("wrote {n} scenes to {}", out.display());
        }
    }
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = args.base.config(&args.data)?;
    config.loss = args.loss;
    config.r_pairs = args.r_pairs;
    config.pairing_mode = args.mode;
    config.seed = args.seed;
    if args.r_img.is_some() || config.dataset == DatasetKind::Xbd {
        config.r_img = args.r_img;
    }
    config.validate()?;
    let pre = pretrain(&config, &args.out)?;
    let ft = finetune(&pre.checkpoint, Some(&args.out))?;
    println!(
        "best epoch {} val loss {:.4}; test macro F1 {:.4} (lr {})",
        pre.checkpoint.epoch, pre.checkpoint.best_val_loss, ft.metrics.macro_f1, ft.metrics.lr
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let dataset = args.base.dataset;
    let mut grid = SweepGrid::default_for(dataset);
    grid.losses = args.losses.clone();
    grid.modes = args.modes.clone();
    grid.r_pairs = args.r_pairs.clone().unwrap_or_else(|| DEFAULT_R_PAIRS.to_vec());
    grid.r_img = args.r_img.clone().unwrap_or_else(|| DEFAULT_R_IMG.to_vec());
    grid.seeds = (0..args.seeds).collect();

    let data = match dataset {
        DatasetKind::Vts => {
            if let Some(textures) = &args.textures {
                let template = GenerateArgs {
                    textures: textures.clone(),
                    out: args.data.clone(),
                    r_img: 0.0,
                    preset: args.base.preset,
                    seed: args.data_seed,
                    n_train: None,
                    n_val: None,
                    n_test: None,
                    image_size: None,
                    irrelevant: false,
                }
                .config(0.0);
                ensure_vts_datasets(&template, &args.data, &grid.r_img)?;
            }
            DataLocator::VtsByRImg(args.data.clone())
        }
        DatasetKind::Xbd => DataLocator::Fixed(args.data.clone()),
    };
    let runner = TrainingRunner {
        base: args.base.config(&args.data)?,
        data,
    };
    write_json_atomic(&args.out.join("sweep_base_config.json"), &runner.base)?;
    write_json_atomic(&args.out.join("sweep_grid.json"), &grid)?;

    let cells = grid.cells();
    let summary = run_sweep(&cells, &runner, &args.out)?;
    println!(
        "{} cells: {} trained, {} already complete, {} failed",
        cells.len(),
        summary.trained,
        summary.skipped,
        summary.failures.len()
    );
    for f in &summary.failures {
        println!("failed {}: {}", f.key, f.error);
    }
    Ok(())
}

fn report(run: &Path) -> Result<()> {
    let (records, failures) = collect_run(run).with_context(|| format!("reading {}", run.display()))?;
    if records.is_empty() {
        bail!("no completed cells in {}", run.display());
    }
    let deltas = compute_deltas(&records);
    let files = render_report(&records, &deltas, &run.join(REPORT_DIR))?;
    for s in &deltas.stats {
        println!(
            "{:<13} {} cells  mean delta {:+.2} pp  sd {:.2} pp",
            s.loss.name(),
            s.cells,
            s.mean_pp,
            s.std_pp
        );
    }
    if !deltas.unmatched.is_empty() {
        println!("{} records without a counterpart mode", deltas.unmatched.len());
    }
    if !failures.is_empty() {
        println!("{} failed cells", failures.len());
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Vts(c) => vts(c),
        Command::Xbd(c) => xbd(c),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report { run } => report(&run),
    }
}
