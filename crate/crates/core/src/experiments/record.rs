use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::pairing::PairingMode;
use crate::training::{DatasetKind, LossKind};

/// Identifies one grid cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: DatasetKind,
    pub loss: LossKind,
    pub r_pairs: f64,
    pub r_img: Option<f64>,
    pub mode: PairingMode,
    pub seed: u64,
}

fn rate(v: f64) -> String {
    let s = format!("{:.2}", v * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl CellKey {
    /// Directory-safe name, e.g. `vts-moco-rp50-ri25-noisy-s0`.
    pub fn slug(&self) -> String {
        let r_img = self.r_img.map(|r| format!("-ri{}", rate(r))).unwrap_or_default();
        format!(
            "{}-{}-rp{}{}-{}-s{}",
            self.dataset.name(),
            self.loss.name(),
            rate(self.r_pairs),
            r_img,
            self.mode.name(),
            self.seed
        )
    }

    /// The same cell under the other pairing mode.
    pub fn counterpart(&self) -> CellKey {
        CellKey {
            mode: match self.mode {
                PairingMode::Noisy => PairingMode::MereExposure,
                PairingMode::MereExposure => PairingMode::Noisy,
            },
            ..self.clone()
        }
    }

    /// Total order used for every table and records file.
    pub fn sort_cmp(&self, other: &CellKey) -> Ordering {
        let r_img = |k: &CellKey| k.r_img.unwrap_or(-1.0);
        (self.dataset, self.loss, self.mode)
            .cmp(&(other.dataset, other.loss, other.mode))
            .then(r_img(self).total_cmp(&r_img(other)))
            .then(self.r_pairs.total_cmp(&other.r_pairs))
            .then(self.seed.cmp(&other.seed))
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.slug())
    }
}

/// Outcome of one completed cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub key: CellKey,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<u8, Option<f64>>,
    /// Checkpoint path relative to the run directory.
    pub checkpoint: PathBuf,
    pub checkpoint_epoch: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub key: CellKey,
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_distinct_across_keys() {
        let k = CellKey {
            dataset: DatasetKind::Vts,
            loss: LossKind::CrossImage,
            r_pairs: 0.25,
            r_img: Some(0.5),
            mode: PairingMode::MereExposure,
            seed: 2,
        };
        assert_eq!(k.slug(), "vts-cross_image-rp25-ri50-mere_exposure-s2");
        assert_ne!(k.slug(), k.counterpart().slug());
        assert_eq!(k.counterpart().counterpart(), k);
        let x = CellKey {
            dataset: DatasetKind::Xbd,
            r_img: None,
            ..k
        };
        assert_eq!(x.slug(), "xbd-cross_image-rp25-mere_exposure-s2");
    }
}
