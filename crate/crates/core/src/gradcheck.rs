//! Central finite-difference validation of hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, SegModel};
use crate::objectives::soft_dice_loss;
use crate::tensor::{NormMode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over scalars of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub max_rel_error: f64,
    /// Entry name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences with step `h`
/// for every trainable scalar in `params`.
///
/// `objective(params, with_grad)` returns the loss; when `with_grad` is true it
/// must also accumulate analytic gradients into `params` (buffers are zeroed
/// beforehand). `params` is restored to its input state on return, except for
/// the gradient buffers, which hold the analytic gradient.
pub fn grad_check<F>(params: &mut ParamSet, h: f64, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet, bool) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let base = params.clone();
    params.zero_grads();
    let loss = objective(params, true)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("objective at base point".into()));
    }
    let analytic: Vec<Vec<f64>> = params.entries().iter().map(|e| e.grad.data().to_vec()).collect();

    let mut eval_at = |entry: usize, idx: usize, value: f64| -> Result<f64> {
        let mut probe = base.clone();
        probe.entries_mut()[entry].tensor.data_mut()[idx] = value;
        let v = objective(&mut probe, false)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "objective with {}[{idx}] = {value}",
                base.entries()[entry].name
            )))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (ei, entry) in base.entries().iter().enumerate() {
        if !entry.is_trainable() {
            continue;
        }
        for (i, &theta) in entry.tensor.data().iter().enumerate() {
            let numeric = (eval_at(ei, i, theta + h)? - eval_at(ei, i, theta - h)?) / (2.0 * h);
            let a = analytic[ei][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((entry.name.clone(), i));
            }
        }
    }
    let grads: Vec<_> = params.entries().iter().map(|e| e.grad.clone()).collect();
    *params = base;
    for (e, g) in params.entries_mut().iter_mut().zip(grads) {
        e.grad = g;
    }
    Ok(report)
}

/// End-to-end check of a segmentation model: soft Dice loss of a train-mode
/// forward pass on a random `1×1×8×8` input with a random label (density 0.3),
/// parameters initialized from `seed`.
pub fn check_model<M: SegModel>(model: &M, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let x = Tensor::from_fn(&[1, 1, 8, 8], |_| rng.random_range(-1.0..1.0));
    let y = Tensor::from_fn(&[1, 1, 8, 8], |_| f64::from(rng.random_bool(0.3)));
    let mut params = model.init_params(seed)?;
    grad_check(&mut params, h, |p, with_grad| {
        let (pred, cache) = model.forward(p, &x, NormMode::Train)?;
        let (loss, grad) = soft_dice_loss(&pred, &y)?;
        if with_grad {
            model.backward(p, &cache, &grad)?;
        }
        Ok(loss)
    })
}
