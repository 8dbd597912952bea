use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::{CellKey, ExperimentRecord};
use crate::pairing::PairingMode;
use crate::training::{DatasetKind, LossKind};

/// Noisy-minus-mere-exposure macro F1 for one grid cell, in percentage
/// points. Seeds present under both modes are averaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub dataset: DatasetKind,
    pub loss: LossKind,
    pub r_pairs: f64,
    pub r_img: Option<f64>,
    pub seeds: usize,
    pub noisy_f1: f64,
    pub mere_exposure_f1: f64,
    pub delta_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: LossKind,
    pub cells: usize,
    pub mean_pp: f64,
    /// Population standard deviation.
    pub std_pp: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub cells: Vec<DeltaCell>,
    pub stats: Vec<LossStats>,
    /// Records without a counterpart under the other mode.
    pub unmatched: Vec<CellKey>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

type CellId = (DatasetKind, LossKind, u64, Option<u64>);

fn cell_id(k: &CellKey) -> CellId {
    (k.dataset, k.loss, k.r_pairs.to_bits(), k.r_img.map(f64::to_bits))
}

pub fn compute_deltas(records: &[ExperimentRecord]) -> DeltaReport {
    let mut by_key: BTreeMap<(CellId, u64, PairingMode), f64> = BTreeMap::new();
    let mut keys: BTreeMap<(CellId, u64, PairingMode), &CellKey> = BTreeMap::new();
    for r in records {
        let k = (cell_id(&r.key), r.key.seed, r.key.mode);
        by_key.insert(k, r.macro_f1);
        keys.insert(k, &r.key);
    }

    let mut unmatched = Vec::new();
    // cell -> (per-seed noisy F1, per-seed mere-exposure F1)
    let mut paired: BTreeMap<CellId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (&(id, seed, mode), &f1) in &by_key {
        let other = match mode {
            PairingMode::Noisy => PairingMode::MereExposure,
            PairingMode::MereExposure => PairingMode::Noisy,
        };
        match by_key.get(&(id, seed, other)) {
            None => unmatched.push(keys[&(id, seed, mode)].clone()),
            Some(&g) if mode == PairingMode::Noisy => {
                let e = paired.entry(id).or_default();
                e.0.push(f1);
                e.1.push(g);
            }
            Some(_) => {}
        }
    }
    unmatched.sort_by(|a, b| a.sort_cmp(b));

    let mut cells: Vec<DeltaCell> = paired
        .into_iter()
        .map(|((dataset, loss, rp, ri), (noisy, mere))| {
            let n = noisy.len() as f64;
            let noisy_f1 = noisy.iter().sum::<f64>() / n;
            let mere_exposure_f1 = mere.iter().sum::<f64>() / n;
            let delta_pp = noisy.iter().zip(&mere).map(|(a, b)| (a - b) * 100.0).sum::<f64>() / n;
            DeltaCell {
                dataset,
                loss,
                r_pairs: f64::from_bits(rp),
                r_img: ri.map(f64::from_bits),
                seeds: noisy.len(),
                noisy_f1,
                mere_exposure_f1,
                delta_pp,
            }
        })
        .collect();
    cells.sort_by(|a, b| {
        (a.dataset, a.loss)
            .cmp(&(b.dataset, b.loss))
            .then(a.r_img.unwrap_or(-1.0).total_cmp(&b.r_img.unwrap_or(-1.0)))
            .then(a.r_pairs.total_cmp(&b.r_pairs))
    });

    let mut per_loss: BTreeMap<LossKind, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        per_loss.entry(c.loss).or_default().push(c.delta_pp);
    }
    let stats = per_loss
        .into_iter()
        .map(|(loss, ds)| {
            let (mean_pp, std_pp) = mean_std(&ds);
            LossStats {
                loss,
                cells: ds.len(),
                mean_pp,
                std_pp,
            }
        })
        .collect();

    DeltaReport {
        cells,
        stats,
        unmatched,
    }
}
