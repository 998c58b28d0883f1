//! Soft Dice training loss and voxel-count evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binarization threshold used by [`confusion`] unless told otherwise.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Soft Dice loss `1 − 2Σpy / (Σp² + Σy²)` over all elements, and its
/// gradient with respect to `pred`.
///
/// When both `pred` and `label` are identically zero the loss is defined as 0
/// with a zero gradient.
pub fn soft_dice_loss(pred: &Tensor, label: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape("soft_dice_loss", label)?;
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "soft_dice_loss: prediction {v} outside [0, 1]"
        )));
    }
    let (mut inter, mut denom) = (0.0, 0.0);
    for (&p, &y) in pred.data().iter().zip(label.data()) {
        inter += p * y;
        denom += p * p + y * y;
    }
    if denom == 0.0 {
        return Ok((0.0, Tensor::zeros(pred.shape())));
    }
    let loss = 1.0 - 2.0 * inter / denom;
    let d2 = denom * denom;
    let grad = pred.zip_map(label, |p, y| (4.0 * inter * p - 2.0 * y * denom) / d2)?;
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts voxel outcomes with `pred >= threshold` taken as positive and any
/// nonzero label as lesion.
pub fn confusion(pred: &Tensor, label: &Tensor, threshold: f64) -> Result<ConfusionCounts> {
    pred.expect_same_shape("confusion", label)?;
    let mut c = ConfusionCounts::default();
    for (&p, &y) in pred.data().iter().zip(label.data()) {
        match (p >= threshold, y != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2TP / (FN + 2TP + FP)`; 1.0 when prediction and label are both empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    let denom = c.fn_ + 2 * c.tp + c.fp;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// `TP / (TP + FN)`; 1.0 when there are no lesion voxels.
pub fn tpr(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// `FP / (TP + FP)`; 0.0 when nothing is predicted.
///
/// Note: this is the false discovery rate, reported under the FPR name used
/// by the lesion segmentation literature this tool reproduces.
pub fn fpr(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp;
    if denom == 0 {
        0.0
    } else {
        c.fp as f64 / denom as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of per-case Dice.
    pub c_dice: f64,
    /// Dice on counts summed over all cases.
    pub v_dice: f64,
    pub v_tpr: f64,
    pub v_fpr: f64,
    pub case_dice: Vec<f64>,
    pub totals: ConfusionCounts,
}

pub fn aggregate_metrics(per_case: &[ConfusionCounts]) -> Result<MetricsReport> {
    if per_case.is_empty() {
        return Err(Error::InvalidArgument("no cases to aggregate".into()));
    }
    let case_dice: Vec<f64> = per_case.iter().map(dice).collect();
    let totals = per_case.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b);
    Ok(MetricsReport {
        c_dice: case_dice.iter().sum::<f64>() / case_dice.len() as f64,
        v_dice: dice(&totals),
        v_tpr: tpr(&totals),
        v_fpr: fpr(&totals),
        case_dice,
        totals,
    })
}
