use std::fmt;
use std::path::PathBuf;

use noisypairs_nn::{EncoderConfig, SgdConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{AugmentConfig, PairingMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Vts,
    Xbd,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Vts => "vts",
            DatasetKind::Xbd => "xbd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vts" => Ok(DatasetKind::Vts),
            "xbd" => Ok(DatasetKind::Xbd),
            _ => Err(Error::InvalidArgument(format!("unknown dataset {s:?}"))),
        }
    }

    /// Number of segmentation classes for finetuning.
    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Vts => 3,
            DatasetKind::Xbd => 5,
        }
    }

    /// Classes averaged into the macro F1.
    pub fn f1_classes(self) -> Vec<u8> {
        match self {
            DatasetKind::Vts => vec![0, 1, 2],
            DatasetKind::Xbd => vec![1, 2, 3, 4],
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Moco,
    WithinImage,
    CrossImage,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Moco, LossKind::WithinImage, LossKind::CrossImage];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Moco => "moco",
            LossKind::WithinImage => "within_image",
            LossKind::CrossImage => "cross_image",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moco" => Ok(LossKind::Moco),
            "within_image" | "within-image" | "within" => Ok(LossKind::WithinImage),
            "cross_image" | "cross-image" | "cross" => Ok(LossKind::CrossImage),
            _ => Err(Error::InvalidArgument(format!("unknown loss {s:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MocoConfig {
    pub queue_size: usize,
    pub momentum: f64,
    pub tau: f64,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    /// Sub-groups for the shuffled key forward pass.
    pub shuffle_groups: usize,
    /// Lower crop-scale bound used instead of the shared augmentation's when
    /// pretraining with this loss. Dense losses need overlapping label grids;
    /// instance discrimination does not.
    pub crop_scale_min: f64,
}

impl Default for MocoConfig {
    fn default() -> Self {
        MocoConfig {
            queue_size: 4096,
            momentum: 0.999,
            tau: 0.2,
            proj_hidden: 512,
            proj_dim: 128,
            shuffle_groups: 4,
            crop_scale_min: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: SgdConfig,
    /// Dense-loss temperature.
    pub dense_tau: f64,
    pub log_pairs: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_grid: Vec<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 30,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_grid: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Generated VTS dataset or ingested xBD directory.
    pub data_dir: PathBuf,
    pub loss: LossKind,
    pub r_pairs: f64,
    /// Per-image noise fraction; VTS only.
    pub r_img: Option<f64>,
    pub pairing_mode: PairingMode,
    pub encoder: EncoderConfig,
    /// Side length images are resized to before augmentation.
    pub input_size: usize,
    pub augment: AugmentConfig,
    pub pretrain: PretrainConfig,
    pub moco: MocoConfig,
    pub finetune: FinetuneConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// 64×64 inputs, a narrow 18-layer encoder with output stride 8 and a
    /// 30-epoch budget.
    pub fn desk(dataset: DatasetKind, data_dir: impl Into<PathBuf>, loss: LossKind) -> Self {
        ExperimentConfig {
            dataset,
            data_dir: data_dir.into(),
            loss,
            r_pairs: 0.0,
            r_img: (dataset == DatasetKind::Vts).then_some(0.5),
            pairing_mode: PairingMode::Noisy,
            encoder: EncoderConfig::desk(),
            input_size: 64,
            augment: AugmentConfig::default(),
            pretrain: PretrainConfig {
                epochs: 30,
                batch_size: 64,
                optim: SgdConfig {
                    lr: 0.05,
                    momentum: 0.9,
                    weight_decay: 1e-4,
                },
                dense_tau: 0.2,
                log_pairs: false,
            },
            moco: MocoConfig {
                queue_size: 512,
                momentum: 0.999,
                tau: 0.2,
                proj_hidden: 128,
                proj_dim: 64,
                shuffle_groups: 4,
                crop_scale_min: 0.2,
            },
            finetune: FinetuneConfig::default(),
            seed: 0,
        }
    }

    /// Full-size settings: ResNet-18 on 256×256 (VTS) or 512×512 (xBD)
    /// tiles.
    pub fn paper(dataset: DatasetKind, data_dir: impl Into<PathBuf>, loss: LossKind) -> Self {
        let mut c = Self::desk(dataset, data_dir, loss);
        c.encoder = EncoderConfig::resnet18();
        c.input_size = match dataset {
            DatasetKind::Vts => 256,
            DatasetKind::Xbd => 512,
        };
        c.pretrain.epochs = 100;
        c.pretrain.batch_size = 128;
        c.moco = MocoConfig::default();
        c
    }

    /// Augmentation chain for pretraining pairs under this config's loss.
    pub fn pretrain_augment(&self) -> AugmentConfig {
        let mut a = self.augment.clone();
        if self.loss == LossKind::Moco {
            a.crop_scale_min = self.moco.crop_scale_min;
        }
        a
    }

    /// Side length of the encoder's output grid.
    pub fn grid_side(&self) -> Result<usize> {
        self.encoder.grid_side(self.input_size).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "input size {} is not a multiple of the encoder stride {}",
                self.input_size,
                self.encoder.output_stride()
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")))
            }
        };
        frac("r_pairs", self.r_pairs)?;
        match (self.dataset, self.r_img) {
            (DatasetKind::Vts, Some(r)) => frac("r_img", r)?,
            (DatasetKind::Vts, None) => return Err(Error::InvalidArgument("VTS runs need r_img".into())),
            (DatasetKind::Xbd, Some(_)) => {
                return Err(Error::InvalidArgument("r_img only applies to VTS".into()))
            }
            (DatasetKind::Xbd, None) => {}
        }
        frac("moco.momentum", self.moco.momentum)?;
        frac("moco.crop_scale_min", self.moco.crop_scale_min)?;
        if self.moco.momentum >= 1.0 {
            return Err(Error::InvalidArgument("moco.momentum must be below 1".into()));
        }
        if self.moco.tau <= 0.0 || self.pretrain.dense_tau <= 0.0 {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        if self.pretrain.batch_size < 2 || self.finetune.batch_size == 0 {
            return Err(Error::InvalidArgument("pretraining needs batches of at least 2".into()));
        }
        if self.moco.shuffle_groups == 0 || self.pretrain.batch_size / self.moco.shuffle_groups < 2 {
            return Err(Error::InvalidArgument(format!(
                "{} key groups leave fewer than 2 samples per group",
                self.moco.shuffle_groups
            )));
        }
        if self.finetune.lr_grid.is_empty() {
            return Err(Error::InvalidArgument("empty finetuning lr grid".into()));
        }
        self.grid_side()?;
        Ok(())
    }
}
