use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel confusion counts, `counts[label][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, predictions: &[u8], labels: &[u8]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        for (&p, &l) in predictions.iter().zip(labels) {
            let (p, l) = (p as usize, l as usize);
            if p >= self.classes || l >= self.classes {
                return Err(Error::InvalidArgument(format!(
                    "class {} outside 0..{}",
                    p.max(l),
                    self.classes
                )));
            }
            self.counts[l * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn get(&self, label: usize, prediction: usize) -> u64 {
        self.counts[label * self.classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(tp, fp, fn)` for one class.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let predicted: u64 = (0..self.classes).map(|l| self.get(l, c)).sum();
        let actual: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, predicted - tp, actual - tp)
    }

    /// `None` when the class appears in neither predictions nor labels.
    pub fn f1(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = self.class_counts(c);
        if tp + fp + fn_ == 0 {
            None
        } else {
            Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// F1 per evaluated class; `None` for classes absent on both sides.
    pub per_class_f1: BTreeMap<u8, Option<f64>>,
    pub macro_f1: f64,
}

pub fn f1_report(cm: &ConfusionMatrix, classes: &[u8]) -> Result<F1Report> {
    if cm.total() == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let per_class_f1: BTreeMap<u8, Option<f64>> = classes.iter().map(|&c| (c, cm.f1(c as usize))).collect();
    let present: Vec<f64> = per_class_f1.values().flatten().copied().collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(F1Report {
        per_class_f1,
        macro_f1,
    })
}

/// Per-class F1 from one global confusion matrix over all pixels, and their
/// macro average over `classes`.
pub fn evaluate_f1(predictions: &[&[u8]], labels: &[&[u8]], classes: &[u8], n_classes: usize) -> Result<F1Report> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (p, l) in predictions.iter().zip(labels) {
        cm.add(p, l)?;
    }
    f1_report(&cm, classes)
}
