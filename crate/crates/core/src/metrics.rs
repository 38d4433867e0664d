//! Confusion-matrix segmentation metrics: mIoU, Dice, accuracy, recall.

use crate::error::{Error, Result};
use crate::loss::DICE_EPSILON;

/// One-vs-rest tallies for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP + FN)`; a class absent from both prediction and target scores 1.
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// `TP / (TP + FN)`, with the same absent-class rule as [`ClassCounts::iou`].
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return if self.fp == 0 { 1.0 } else { 0.0 };
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// Hard-mask Dice with the loss smoothing constant.
    pub fn dice(&self) -> f64 {
        (2.0 * self.tp as f64 + DICE_EPSILON)
            / ((2 * self.tp + self.fp + self.fn_) as f64 + DICE_EPSILON)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class counts derived from a `C x C` confusion matrix (rows: target, columns: prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: usize,
    matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            matrix: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    /// Pixels with target class `t` predicted as class `p`.
    pub fn cell(&self, t: usize, p: usize) -> u64 {
        self.matrix[t * self.classes + p]
    }

    pub fn class(&self, c: usize) -> ClassCounts {
        let tp = self.cell(c, c);
        let row: u64 = (0..self.classes).map(|p| self.cell(c, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.cell(t, c)).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Input(format!(
                "cannot merge confusion counts over {} and {} classes",
                self.classes, other.classes
            )));
        }
        self.matrix
            .iter_mut()
            .zip(&other.matrix)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Tallies a predicted label map against the target; labels must lie in `0..classes`.
pub fn confusion_counts(pred: &[u8], target: &[u8], classes: usize) -> Result<ConfusionCounts> {
    if pred.len() != target.len() {
        return Err(Error::Input(format!(
            "prediction has {} pixels but target has {}",
            pred.len(),
            target.len()
        )));
    }
    let mut counts = ConfusionCounts::new(classes);
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t) = (p as usize, t as usize);
        if p >= classes || t >= classes {
            return Err(Error::Input(format!(
                "label {} outside 0..{classes}",
                p.max(t)
            )));
        }
        counts.matrix[t * classes + p] += 1;
    }
    Ok(counts)
}

/// Class index reported for Dice and recall.
pub const FOREGROUND: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub miou: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub recall: f64,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> Metrics {
    let c = counts.classes();
    let miou = (0..c).map(|k| counts.class(k).iou()).sum::<f64>() / c.max(1) as f64;
    let correct: u64 = (0..c).map(|k| counts.cell(k, k)).sum();
    let fg = counts.class(FOREGROUND.min(c.saturating_sub(1)));
    Metrics {
        miou,
        dice: fg.dice(),
        accuracy: ratio(correct, counts.total()),
        recall: fg.recall(),
    }
}
