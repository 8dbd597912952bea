//! Grid sweeps over a shared run directory. Every cell lives in
//! `cells/<slug>/`; a cell with a `record.json` is complete and never rerun.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::record::{CellKey, ExperimentRecord, FailureRecord};
use crate::error::{Error, IoContext, Result};
use crate::pairing::PairingMode;
use crate::raster::{read_json, write_atomic, write_json_atomic};
use crate::training::{finetune, pretrain, DatasetKind, ExperimentConfig, LossKind, CHECKPOINT_FILE};
use crate::vts::{generate_dataset, GeneratorConfig, DATASET_FILE};

pub const CELLS_DIR: &str = "cells";
pub const RECORD_FILE: &str = "record.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";

pub const DEFAULT_R_PAIRS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_R_IMG: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub dataset: DatasetKind,
    pub losses: Vec<LossKind>,
    pub r_pairs: Vec<f64>,
    /// Ignored for xBD.
    pub r_img: Vec<f64>,
    pub modes: Vec<PairingMode>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn default_for(dataset: DatasetKind) -> Self {
        SweepGrid {
            dataset,
            losses: LossKind::ALL.to_vec(),
            r_pairs: DEFAULT_R_PAIRS.to_vec(),
            r_img: DEFAULT_R_IMG.to_vec(),
            modes: vec![PairingMode::Noisy, PairingMode::MereExposure],
            seeds: vec![0],
        }
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let r_imgs: Vec<Option<f64>> = match self.dataset {
            DatasetKind::Vts => self.r_img.iter().copied().map(Some).collect(),
            DatasetKind::Xbd => vec![None],
        };
        let mut out = Vec::new();
        for &loss in &self.losses {
            for &r_img in &r_imgs {
                for &r_pairs in &self.r_pairs {
                    for &mode in &self.modes {
                        for &seed in &self.seeds {
                            out.push(CellKey {
                                dataset: self.dataset,
                                loss,
                                r_pairs,
                                r_img,
                                mode,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// What a runner reports back for a finished cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub macro_f1: f64,
    pub per_class_f1: std::collections::BTreeMap<u8, Option<f64>>,
    /// Relative to the run directory.
    pub checkpoint: PathBuf,
    pub checkpoint_epoch: usize,
}

/// Trains and evaluates a single cell inside `cell_dir`.
pub trait CellRunner: Sync {
    fn run(&self, key: &CellKey, cell_dir: &Path, run_dir: &Path) -> Result<CellOutcome>;

    /// Whether a completed cell was produced by this runner's current
    /// settings; stale cells are rerun.
    fn is_current(&self, _key: &CellKey, _cell_dir: &Path) -> bool {
        true
    }
}

pub const CELL_CONFIG_FILE: &str = "config.json";

/// Where each cell finds its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataLocator {
    /// One directory for every cell (xBD).
    Fixed(PathBuf),
    /// One generated VTS dataset per `r_img`, see [`vts_dataset_dir`].
    VtsByRImg(PathBuf),
}

pub fn vts_dataset_dir(root: &Path, r_img: f64) -> PathBuf {
    root.join(format!("r_img_{r_img:.2}"))
}

/// Generates any missing per-`r_img` datasets under `root` from `template`.
pub fn ensure_vts_datasets(template: &GeneratorConfig, root: &Path, r_imgs: &[f64]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for &r in r_imgs {
        let dir = vts_dataset_dir(root, r);
        if dir.join(DATASET_FILE).exists() {
            log::info!("reusing {}", dir.display());
        } else {
            log::info!("generating {}", dir.display());
            let config = GeneratorConfig {
                r_img: r,
                ..template.clone()
            };
            generate_dataset(&config, &dir)?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Pretrains and finetunes one configuration per cell.
pub struct TrainingRunner {
    pub base: ExperimentConfig,
    pub data: DataLocator,
}

impl TrainingRunner {
    pub fn config_for(&self, key: &CellKey) -> Result<ExperimentConfig> {
        if key.dataset != self.base.dataset {
            return Err(Error::InvalidArgument(format!(
                "cell {key} does not match the base dataset {}",
                self.base.dataset
            )));
        }
        let data_dir = match (&self.data, key.r_img) {
            (DataLocator::Fixed(p), _) => p.clone(),
            (DataLocator::VtsByRImg(root), Some(r)) => vts_dataset_dir(root, r),
            (DataLocator::VtsByRImg(_), None) => {
                return Err(Error::InvalidArgument(format!("cell {key} has no r_img")))
            }
        };
        let config = ExperimentConfig {
            data_dir,
            loss: key.loss,
            r_pairs: key.r_pairs,
            r_img: key.r_img,
            pairing_mode: key.mode,
            seed: key.seed,
            ..self.base.clone()
        };
        config.validate()?;
        Ok(config)
    }
}

impl CellRunner for TrainingRunner {
    fn run(&self, key: &CellKey, cell_dir: &Path, run_dir: &Path) -> Result<CellOutcome> {
        let config = self.config_for(key)?;
        write_json_atomic(&cell_dir.join(CELL_CONFIG_FILE), &config)?;
        let pre = pretrain(&config, cell_dir)?;
        let ft = finetune(&pre.checkpoint, Some(cell_dir))?;
        let ckpt = cell_dir.join(CHECKPOINT_FILE);
        Ok(CellOutcome {
            macro_f1: ft.metrics.macro_f1,
            per_class_f1: ft.metrics.per_class_f1,
            checkpoint: ckpt.strip_prefix(run_dir).unwrap_or(&ckpt).to_path_buf(),
            checkpoint_epoch: pre.checkpoint.epoch,
        })
    }

    fn is_current(&self, key: &CellKey, cell_dir: &Path) -> bool {
        match (self.config_for(key), read_json::<ExperimentConfig>(&cell_dir.join(CELL_CONFIG_FILE))) {
            (Ok(want), Ok(have)) => want == have,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    /// Every completed record in the run directory, sorted.
    pub records: Vec<ExperimentRecord>,
    /// Failures of cells that are still incomplete.
    pub failures: Vec<FailureRecord>,
    /// Cells trained by this call.
    pub trained: usize,
    /// Cells skipped because they were already complete.
    pub skipped: usize,
}

pub fn cell_dir(run_dir: &Path, key: &CellKey) -> PathBuf {
    run_dir.join(CELLS_DIR).join(key.slug())
}

/// Runs every incomplete cell of `cells`. A failing cell is logged to its
/// `failure.json` and the sweep moves on.
pub fn run_sweep(cells: &[CellKey], runner: &dyn CellRunner, run_dir: &Path) -> Result<SweepSummary> {
    fs::create_dir_all(run_dir.join(CELLS_DIR)).at(run_dir)?;
    let mut trained = 0;
    let mut skipped = 0;
    for (i, key) in cells.iter().enumerate() {
        let dir = cell_dir(run_dir, key);
        if dir.join(RECORD_FILE).exists() {
            if runner.is_current(key, &dir) {
                skipped += 1;
                continue;
            }
            log::warn!("cell {key} was run with other settings; rerunning");
            let stale = dir.join(RECORD_FILE);
            fs::remove_file(&stale).at(&stale)?;
        }
        fs::create_dir_all(&dir).at(&dir)?;
        log::info!("cell {}/{}: {key}", i + 1, cells.len());
        let t = Instant::now();
        trained += 1;
        match runner.run(key, &dir, run_dir) {
            Ok(out) => {
                let record = ExperimentRecord {
                    key: key.clone(),
                    macro_f1: out.macro_f1,
                    per_class_f1: out.per_class_f1,
                    checkpoint: out.checkpoint,
                    checkpoint_epoch: out.checkpoint_epoch,
                    wall_clock_seconds: t.elapsed().as_secs_f64(),
                };
                write_json_atomic(&dir.join(RECORD_FILE), &record)?;
                let stale = dir.join(FAILURE_FILE);
                if stale.exists() {
                    fs::remove_file(&stale).at(&stale)?;
                }
                log::info!("cell {key}: macro F1 {:.4}", record.macro_f1);
            }
            Err(e) => {
                log::warn!("cell {key} failed: {e}");
                write_json_atomic(
                    &dir.join(FAILURE_FILE),
                    &FailureRecord {
                        key: key.clone(),
                        error: e.to_string(),
                    },
                )?;
            }
        }
    }
    let (records, failures) = collect_run(run_dir)?;
    Ok(SweepSummary {
        records,
        failures,
        trained,
        skipped,
    })
}

/// Reads every cell of a run directory and rewrites `records.jsonl` and
/// `failures.jsonl` from them.
pub fn collect_run(run_dir: &Path) -> Result<(Vec<ExperimentRecord>, Vec<FailureRecord>)> {
    let cells = run_dir.join(CELLS_DIR);
    let mut records: Vec<ExperimentRecord> = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();
    if cells.is_dir() {
        for entry in fs::read_dir(&cells).at(&cells)? {
            let dir = entry.at(&cells)?.path();
            if dir.join(RECORD_FILE).exists() {
                records.push(read_json(&dir.join(RECORD_FILE))?);
            } else if dir.join(FAILURE_FILE).exists() {
                failures.push(read_json(&dir.join(FAILURE_FILE))?);
            }
        }
    }
    records.sort_by(|a, b| a.key.sort_cmp(&b.key));
    failures.sort_by(|a, b| a.key.sort_cmp(&b.key));
    write_atomic(&run_dir.join(RECORDS_FILE), jsonl(&records)?.as_bytes())?;
    write_atomic(&run_dir.join(FAILURES_FILE), jsonl(&failures)?.as_bytes())?;
    Ok((records, failures))
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::Shape(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).at(path))
        .collect()
}
