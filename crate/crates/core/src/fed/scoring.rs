use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objectives::soft_dice_loss;
use crate::tensor::Tensor;

/// Segmentation-ability score of one prediction:
/// `[Σ(p·y) / Σy] · (1 − L_dice(p, y))`.
///
/// Returns `None` when the label has no lesion voxels; such iterations are left
/// out of the round mean.
pub fn ability_score(pred: &Tensor, label: &Tensor) -> Result<Option<f64>> {
    let (loss, _) = soft_dice_loss(pred, label)?;
    let lesion: f64 = label.sum();
    if lesion == 0.0 {
        return Ok(None);
    }
    let confidence: f64 = pred.data().iter().zip(label.data()).map(|(p, y)| p * y).sum::<f64>() / lesion;
    Ok(Some(confidence * (1.0 - loss)))
}

/// Entropy variant: `mean(−p·ln p) · (1 − L_dice(p, y))`, with `p` clamped to
/// `[1e-12, 1 − 1e-12]`. `None` for lesion-free labels, as in [`ability_score`].
pub fn ability_score_entropy(pred: &Tensor, label: &Tensor) -> Result<Option<f64>> {
    let (loss, _) = soft_dice_loss(pred, label)?;
    if label.sum() == 0.0 || pred.is_empty() {
        return Ok(None);
    }
    let entropy = pred
        .data()
        .iter()
        .map(|&p| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            -p * p.ln()
        })
        .sum::<f64>()
        / pred.len() as f64;
    Ok(Some(entropy * (1.0 - loss)))
}

/// Guards for the loss re-weighting factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReweightLimits {
    /// Accumulated statistics below this are raised to it.
    pub floor: f64,
    /// Weights are capped at `cap_factor · N`.
    pub cap_factor: f64,
}

impl Default for ReweightLimits {
    fn default() -> Self {
        Self {
            floor: 1e-6,
            cap_factor: 10.0,
        }
    }
}

/// Loss weights `w_i = Σ_j v_j / (N · v_i)` for every client.
///
/// `values[i]` is client `i`'s accumulated lesion statistic, `None` if it has
/// not been measured yet. If nothing has been measured (before the first
/// aggregation) every weight is 1.
pub fn local_loss_weights(values: &[Option<f64>], limits: &ReweightLimits) -> Vec<f64> {
    if values.iter().all(Option::is_none) {
        return vec![1.0; values.len()];
    }
    let n = values.len() as f64;
    let floored: Vec<f64> = values
        .iter()
        .map(|v| v.unwrap_or(0.0).max(limits.floor))
        .collect();
    let total: f64 = floored.iter().sum();
    let cap = limits.cap_factor * n;
    floored.iter().map(|v| (total / (n * v)).min(cap)).collect()
}

pub fn local_loss_weight(values: &[Option<f64>], i: usize, limits: &ReweightLimits) -> f64 {
    local_loss_weights(values, limits)[i]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let y = t(&[1.0, 0.0, 1.0]);
        assert_eq!(ability_score(&y, &y).unwrap(), Some(1.0));
    }

    #[test]
    fn worked_example() {
        let p = t(&[0.8, 0.2, 0.1, 0.9]);
        let y = t(&[1.0, 0.0, 0.0, 1.0]);
        let s = ability_score(&p, &y).unwrap().unwrap();
        assert!((s - 0.85 * (1.0 - 1.0 / 35.0)).abs() < 1e-15);
        assert!((s - 0.825714).abs() < 1e-6);
    }

    #[test]
    fn uniform_half_prediction() {
        let p = t(&[0.5; 6]);
        let y = t(&[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let (loss, _) = soft_dice_loss(&p, &y).unwrap();
        let s = ability_score(&p, &y).unwrap().unwrap();
        assert!((s - 0.5 * (1.0 - loss)).abs() < 1e-15);
        let e = ability_score_entropy(&p, &y).unwrap().unwrap();
        assert!((e - 0.5 * 2f64.ln() * (1.0 - loss)).abs() < 1e-15);
        assert!((0.5 * 2f64.ln() - 0.34657).abs() < 1e-5);
    }

    #[test]
    fn empty_label_is_skipped() {
        let p = t(&[0.3, 0.2]);
        let y = t(&[0.0, 0.0]);
        assert_eq!(ability_score(&p, &y).unwrap(), None);
        assert_eq!(ability_score_entropy(&p, &y).unwrap(), None);
    }

    #[test]
    fn saturated_entropy_vanishes() {
        let p = t(&[1.0, 0.0, 1.0, 0.0]);
        let y = t(&[1.0, 0.0, 0.0, 1.0]);
        let e = ability_score_entropy(&p, &y).unwrap().unwrap();
        assert!((0.0..1e-9).contains(&e));
    }

    #[test]
    fn reweighting() {
        let lim = ReweightLimits::default();
        let w = local_loss_weights(&[Some(0.01), Some(0.02), Some(0.03)], &lim);
        for (a, b) in w.iter().zip([2.0, 1.0, 2.0 / 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(local_loss_weights(&[Some(0.4); 4], &lim), vec![1.0; 4]);
        assert_eq!(local_loss_weights(&[None, None], &lim), vec![1.0; 2]);
        let zero = local_loss_weights(&[Some(0.0), Some(0.05)], &lim);
        assert_eq!(zero[0], 20.0);
        assert!(zero[1] < 1.0);
        assert_eq!(local_loss_weight(&[Some(0.01), Some(0.03)], 0, &lim), 2.0);
    }
}
