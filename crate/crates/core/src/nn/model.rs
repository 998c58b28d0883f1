use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamSet, ParamTag};
use crate::error::{Error, Result};
use crate::tensor::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, BatchNormCache, BatchNormState, NormMode, Tensor,
};

/// A per-pixel probabilistic segmentation model whose parameters live in a
/// [`ParamSet`] owned by the caller.
///
/// `forward` takes `&mut ParamSet` because train-mode normalization writes
/// running statistics. `backward` accumulates into the parameter gradients.
pub trait SegModel: Send + Sync {
    type Cache: Send;

    fn init_params(&self, seed: u64) -> Result<ParamSet>;

    /// Maps `[B, C, H, W]` images to `[B, 1, H, W]` probabilities.
    fn forward(
        &self,
        params: &mut ParamSet,
        input: &Tensor,
        mode: NormMode,
    ) -> Result<(Tensor, Self::Cache)>;

    fn backward(&self, params: &mut ParamSet, cache: &Self::Cache, grad_out: &Tensor)
        -> Result<()>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output width of each conv → batchnorm → relu block.
    pub blocks: Vec<usize>,
    pub kernel_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            blocks: vec![8, 16, 16],
            kernel_size: 3,
            bn_eps: BatchNormState::DEFAULT_EPS,
            bn_momentum: BatchNormState::DEFAULT_STAT_MOMENTUM,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("model needs at least one block".into()));
        }
        if self.in_channels == 0 || self.blocks.contains(&0) {
            return Err(Error::Config("channel widths must be at least 1".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd to preserve spatial size, got {}",
                self.kernel_size
            )));
        }
        if !(self.bn_eps >= 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("invalid batchnorm eps or momentum".into()));
        }
        Ok(())
    }

    /// Recovers the topology from a parameter set written by [`SegNet::init_params`].
    /// Normalization constants fall back to defaults.
    pub fn infer_from(params: &ParamSet) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut in_channels = None;
        let mut kernel_size = None;
        while let Some(e) = params.get(&format!("block{}.conv.weight", blocks.len())) {
            let [out, inp, k, _] = e.tensor.dims4("conv weight")?;
            in_channels.get_or_insert(inp);
            kernel_size.get_or_insert(k);
            blocks.push(out);
        }
        let config = Self {
            in_channels: in_channels
                .ok_or_else(|| Error::Config("parameter set has no conv blocks".into()))?,
            blocks,
            kernel_size: kernel_size.unwrap_or(3),
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockSlots {
    conv: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    batches: usize,
}

/// Stack of `conv(k×k, same padding) → batchnorm → relu` blocks followed by a
/// `1×1` conv head and a sigmoid.
///
/// Block convolutions carry no bias: a bias feeding straight into batch
/// normalization is cancelled by the mean subtraction.
#[derive(Clone, Debug)]
pub struct SegNet {
    config: ModelConfig,
    blocks: Vec<BlockSlots>,
    head_weight: usize,
    head_bias: usize,
}

pub struct SegNetCache {
    blocks: Vec<BlockCache>,
    head_input: Tensor,
    output: Tensor,
}

struct BlockCache {
    input: Tensor,
    norm: BatchNormCache,
    pre_activation: Tensor,
}

impl SegNet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut index = 0;
        let mut next = || {
            index += 1;
            index - 1
        };
        let blocks = config
            .blocks
            .iter()
            .map(|_| BlockSlots {
                conv: next(),
                gamma: next(),
                beta: next(),
                running_mean: next(),
                running_var: next(),
                batches: next(),
            })
            .collect();
        let head_weight = next();
        let head_bias = next();
        Ok(Self {
            config,
            blocks,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn padding(&self) -> usize {
        self.config.kernel_size / 2
    }

    fn norm_state(&self, params: &ParamSet, slots: &BlockSlots) -> BatchNormState {
        BatchNormState {
            gamma: params.tensor(slots.gamma).clone(),
            beta: params.tensor(slots.beta).clone(),
            running_mean: params.tensor(slots.running_mean).clone(),
            running_var: params.tensor(slots.running_var).clone(),
            eps: self.config.bn_eps,
            stat_momentum: self.config.bn_momentum,
        }
    }
}

impl SegModel for SegNet {
    type Cache = SegNetCache;

    fn init_params(&self, seed: u64) -> Result<ParamSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |shape: &[usize]| -> Tensor {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("positive standard deviation");
            Tensor::from_fn(shape, |_| normal.sample(&mut rng))
        };
        let k = self.config.kernel_size;
        let mut params = ParamSet::new();
        let mut channels = self.config.in_channels;
        for (i, &width) in self.config.blocks.iter().enumerate() {
            let p = format!("block{i}");
            params.push(
                format!("{p}.conv.weight"),
                he(&[width, channels, k, k]),
                ParamTag::Rest,
                ParamKind::Trainable,
            )?;
            let bn = BatchNormState::new(width);
            params.push(format!("{p}.bn.weight"), bn.gamma, ParamTag::Norm, ParamKind::Trainable)?;
            params.push(format!("{p}.bn.bias"), bn.beta, ParamTag::Norm, ParamKind::Trainable)?;
            params.push(
                format!("{p}.bn.running_mean"),
                bn.running_mean,
                ParamTag::Norm,
                ParamKind::Statistic,
            )?;
            params.push(
                format!("{p}.bn.running_var"),
                bn.running_var,
                ParamTag::Norm,
                ParamKind::Statistic,
            )?;
            params.push(
                format!("{p}.bn.num_batches_tracked"),
                Tensor::zeros(&[1]),
                ParamTag::Norm,
                ParamKind::Statistic,
            )?;
            channels = width;
        }
        params.push("head.weight", he(&[1, channels, 1, 1]), ParamTag::Rest, ParamKind::Trainable)?;
        params.push("head.bias", Tensor::zeros(&[1]), ParamTag::Rest, ParamKind::Trainable)?;
        Ok(params)
    }

    fn forward(
        &self,
        params: &mut ParamSet,
        input: &Tensor,
        mode: NormMode,
    ) -> Result<(Tensor, SegNetCache)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for slots in &self.blocks {
            let kernel = params.tensor(slots.conv);
            let bias = Tensor::zeros(&[kernel.shape()[0]]);
            let conv = conv2d(&x, kernel, &bias, self.padding())?;
            let mut state = self.norm_state(params, slots);
            let (normed, norm_cache) = batchnorm(&conv, &mut state, mode)?;
            if mode == NormMode::Train {
                *params.tensor_mut(slots.running_mean) = state.running_mean;
                *params.tensor_mut(slots.running_var) = state.running_var;
                params.tensor_mut(slots.batches).data_mut()[0] += 1.0;
            }
            let activated = relu(&normed);
            caches.push(BlockCache {
                input: x,
                norm: norm_cache,
                pre_activation: normed,
            });
            x = activated;
        }
        let logits = conv2d(
            &x,
            params.tensor(self.head_weight),
            params.tensor(self.head_bias),
            0,
        )?;
        let output = sigmoid(&logits);
        output.ensure_finite("segmentation output")?;
        Ok((
            output.clone(),
            SegNetCache {
                blocks: caches,
                head_input: x,
                output,
            },
        ))
    }

    fn backward(&self, params: &mut ParamSet, cache: &SegNetCache, grad_out: &Tensor) -> Result<()> {
        let grad_logits = sigmoid_backward(&cache.output, grad_out)?;
        let head = conv2d_backward(&cache.head_input, params.tensor(self.head_weight), 0, &grad_logits)?;
        params.accumulate_grad(self.head_weight, &head.kernel)?;
        params.accumulate_grad(self.head_bias, &head.bias)?;
        let mut grad = head.input;
        for (slots, block) in self.blocks.iter().zip(&cache.blocks).rev() {
            let grad_norm = relu_backward(&block.pre_activation, &grad)?;
            let bn = batchnorm_backward(&block.norm, params.tensor(slots.gamma), &grad_norm)?;
            params.accumulate_grad(slots.gamma, &bn.gamma)?;
            params.accumulate_grad(slots.beta, &bn.beta)?;
            let conv = conv2d_backward(&block.input, params.tensor(slots.conv), self.padding(), &bn.input)?;
            params.accumulate_grad(slots.conv, &conv.kernel)?;
            grad = conv.input;
        }
        Ok(())
    }
}

/// Two-parameter per-pixel logistic model: `p = sigmoid(weight * x + offset)`.
///
/// `weight` is tagged [`ParamTag::Rest`] and `offset` [`ParamTag::Norm`], so the
/// model exercises both sides of the federated partition at minimal size.
#[derive(Clone, Debug)]
pub struct PixelModel {
    pub init_weight: f64,
    pub init_offset: f64,
}

impl SegModel for PixelModel {
    type Cache = (Tensor, Tensor);

    fn init_params(&self, _seed: u64) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        params.push("weight", Tensor::scalar(self.init_weight), ParamTag::Rest, ParamKind::Trainable)?;
        params.push("offset", Tensor::scalar(self.init_offset), ParamTag::Norm, ParamKind::Trainable)?;
        Ok(params)
    }

    fn forward(
        &self,
        params: &mut ParamSet,
        input: &Tensor,
        _mode: NormMode,
    ) -> Result<(Tensor, Self::Cache)> {
        let [b, _, h, w] = input.dims4("pixel model input")?;
        let (wt, off) = (params.tensor(0).data()[0], params.tensor(1).data()[0]);
        let first_channel = Tensor::from_fn(&[b, 1, h, w], |i| {
            let (bi, r) = (i / (h * w), i % (h * w));
            input.data()[bi * input.len() / b + r]
        });
        let out = sigmoid(&first_channel.map(|x| wt * x + off));
        out.ensure_finite("pixel model output")?;
        Ok((out.clone(), (first_channel, out)))
    }

    fn backward(&self, params: &mut ParamSet, cache: &Self::Cache, grad_out: &Tensor) -> Result<()> {
        let (x, out) = cache;
        let gl = sigmoid_backward(out, grad_out)?;
        let gw: f64 = gl.data().iter().zip(x.data()).map(|(g, x)| g * x).sum();
        params.accumulate_grad(0, &Tensor::scalar(gw))?;
        params.accumulate_grad(1, &Tensor::scalar(gl.sum()))?;
        Ok(())
    }
}
