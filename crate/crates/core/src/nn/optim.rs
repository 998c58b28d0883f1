use serde::{Deserialize, Serialize};

use super::params::{ParamSet, ParamTag};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to batchnorm gamma/beta as well.
    pub decay_norm_affine: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            momentum: 0.9,
            weight_decay: 0.0005,
            decay_norm_affine: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One optimizer step over every trainable entry:
/// `buf ← momentum·buf + grad + weight_decay·θ`, then `θ ← θ − lr·buf`.
///
/// Statistic entries (running mean/var, counters) are never touched.
pub fn sgd_step(params: &mut ParamSet, opt: &OptimizerConfig) -> Result<()> {
    if let Some(bad) = params
        .entries()
        .iter()
        .find(|e| e.is_trainable() && !e.grad.is_finite())
    {
        return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
    }
    for e in params.entries_mut().iter_mut().filter(|e| e.is_trainable()) {
        let decay = if e.tag == ParamTag::Norm && !opt.decay_norm_affine {
            0.0
        } else {
            opt.weight_decay
        };
        let theta = e.tensor.data_mut();
        let buf = e.momentum.data_mut();
        for ((t, b), g) in theta.iter_mut().zip(buf.iter_mut()).zip(e.grad.data()) {
            *b = opt.momentum * *b + g + decay * *t;
            *t -= opt.learning_rate * *b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("theta", Tensor::scalar(value), ParamTag::Rest, ParamKind::Trainable)
            .unwrap();
        p.entries_mut()[0].grad = Tensor::scalar(grad);
        p
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = single(1.5, 3.0);
        let opt = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        sgd_step(&mut p, &opt).unwrap();
        assert_eq!(p.tensor(0).data(), &[1.5]);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = single(1.0, 1.0);
        let opt = OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            decay_norm_affine: true,
        };
        sgd_step(&mut p, &opt).unwrap();
        assert!((p.tensor(0).data()[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut p, &opt).unwrap();
        assert!((p.tensor(0).data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn pure_weight_decay() {
        let mut p = single(1.0, 0.0);
        let opt = OptimizerConfig {
            momentum: 0.0,
            ..OptimizerConfig::default()
        };
        sgd_step(&mut p, &opt).unwrap();
        assert!((p.tensor(0).data()[0] - 0.9999999).abs() < 1e-15);
    }

    #[test]
    fn statistics_untouched_and_nan_rejected() {
        let mut p = single(1.0, 1.0);
        p.push("stat", Tensor::scalar(4.0), ParamTag::Norm, ParamKind::Statistic)
            .unwrap();
        p.entries_mut()[1].grad = Tensor::scalar(100.0);
        sgd_step(&mut p, &OptimizerConfig::default()).unwrap();
        assert_eq!(p.tensor(1).data(), &[4.0]);

        p.entries_mut()[0].grad = Tensor::scalar(f64::NAN);
        let err = sgd_step(&mut p, &OptimizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn norm_decay_can_be_disabled() {
        let mut p = ParamSet::new();
        p.push("gamma", Tensor::scalar(1.0), ParamTag::Norm, ParamKind::Trainable)
            .unwrap();
        let opt = OptimizerConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.5,
            decay_norm_affine: false,
        };
        sgd_step(&mut p, &opt).unwrap();
        assert_eq!(p.tensor(0).data(), &[1.0]);
    }
}
