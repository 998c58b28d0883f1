use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::aggregate::is_shared;
use super::scoring::{ability_score, ability_score_entropy};
use super::strategy::{AbilityScore, StrategyConfig};
use crate::error::{Error, Result};
use crate::nn::{sgd_step, OptimizerConfig, ParamSet, SegModel};
use crate::objectives::soft_dice_loss;
use crate::synth::{augment, lesion_voxels, sample_patch, Sample};
use crate::tensor::{NormMode, Tensor};

/// Per-client training knobs shared by every round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSettings {
    /// Local iterations per round.
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub augment: bool,
    /// Probability of centring a patch on a lesion pixel.
    pub lesion_focus: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for LocalSettings {
    fn default() -> Self {
        Self {
            iterations: 100,
            batch_size: 8,
            patch_size: 32,
            augment: true,
            lesion_focus: 0.0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Running mean over rounds of a per-round statistic.
///
/// Rounds that produced no measurement advance `rounds` but leave the value
/// unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    pub value: Option<f64>,
    /// Completed rounds.
    pub rounds: u32,
    /// Rounds that contributed a measurement.
    pub samples: u32,
}

impl RunningMean {
    pub fn update(&mut self, round_mean: Option<f64>) {
        self.rounds += 1;
        if let Some(m) = round_mean {
            self.samples += 1;
            let k = self.samples as f64;
            self.value = Some(match self.value {
                Some(v) => ((k - 1.0) * v + m) / k,
                None => m,
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Weighted loss actually optimized, including any proximal term.
    pub loss: f64,
    pub dice_loss: f64,
    pub score: Option<f64>,
    /// Mean lesion ratio over the batch patches that contain brain.
    pub lesion_ratio: Option<f64>,
    pub lesion_voxels: f64,
}

/// One federation participant.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub index: usize,
    pub params: ParamSet,
    pub rng: ChaCha8Rng,
    /// Accumulated lesion-to-brain ratio.
    pub ratio: RunningMean,
    /// Accumulated lesion voxel count per patch.
    pub voxels: RunningMean,
    /// Mean ability score of the latest round.
    pub p_score: f64,
    /// Multiplier applied to the Dice loss in the next round.
    pub loss_weight: f64,
    pub log: Vec<IterationRecord>,
}

impl ClientState {
    pub fn new(index: usize, params: ParamSet, rng: ChaCha8Rng) -> Self {
        Self {
            index,
            params,
            rng,
            ratio: RunningMean::default(),
            voxels: RunningMean::default(),
            p_score: 0.0,
            loss_weight: 1.0,
            log: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalRoundSummary {
    pub mean_loss: f64,
    pub p_score: f64,
    pub round_ratio: Option<f64>,
    pub round_voxels: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs `settings.iterations` local optimization steps.
///
/// Shared entries are first loaded from `global`; normalization entries stay
/// local when the strategy excludes them. Each step samples a batch of
/// augmented patches, minimizes `loss_weight · L_dice` (plus the proximal term
/// when configured), records the ability score of the pre-update prediction,
/// and applies one SGD step. Afterwards the running lesion statistics and the
/// round's mean ability score are updated.
pub fn local_round<M: SegModel>(
    model: &M,
    client: &mut ClientState,
    global: &ParamSet,
    data: &[Sample],
    settings: &LocalSettings,
    strategy: &StrategyConfig,
) -> Result<LocalRoundSummary> {
    if settings.iterations == 0 || settings.batch_size == 0 {
        return Err(Error::InvalidArgument("local rounds need at least one iteration and one patch".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("client has no training cases".into()));
    }
    client.params.copy_values_from(global, |e| is_shared(e, strategy.bn_exclude))?;
    let anchor = strategy.proximal_mu.map(|mu| (mu, global.clone()));
    let weight = client.loss_weight;
    let mut records = Vec::with_capacity(settings.iterations);

    for _ in 0..settings.iterations {
        let mut images = Vec::with_capacity(settings.batch_size);
        let mut labels = Vec::with_capacity(settings.batch_size);
        let mut ratios = Vec::with_capacity(settings.batch_size);
        let mut voxels = 0.0;
        for _ in 0..settings.batch_size {
            let case = &data[client.rng.random_range(0..data.len())];
            let mut patch = sample_patch(case, settings.patch_size, settings.lesion_focus, &mut client.rng)?;
            if settings.augment {
                patch = augment(&patch, &mut client.rng)?;
            }
            ratios.extend(patch.lesion_ratio());
            voxels += lesion_voxels(&patch.label) as f64;
            images.push(patch.image);
            labels.push(patch.label);
        }
        let input = Tensor::stack(&images)?;
        let label = Tensor::stack(&labels)?;

        client.params.zero_grads();
        let (pred, cache) = model.forward(&mut client.params, &input, NormMode::Train)?;
        let (dice_loss, dice_grad) = soft_dice_loss(&pred, &label)?;
        let score = match strategy.score_kind() {
            AbilityScore::Probability => ability_score(&pred, &label)?,
            AbilityScore::Entropy => ability_score_entropy(&pred, &label)?,
        };
        let mut loss = weight * dice_loss;
        if let Some((mu, anchor)) = &anchor {
            loss += 0.5 * mu * proximal_distance(&client.params, anchor, strategy.bn_exclude);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at local iteration {} (dice {dice_loss}, weight {weight})",
                records.len()
            )));
        }
        model.backward(&mut client.params, &cache, &dice_grad.map(|g| weight * g))?;
        if let Some((mu, anchor)) = &anchor {
            add_proximal_grad(&mut client.params, anchor, *mu, strategy.bn_exclude);
        }
        sgd_step(&mut client.params, &settings.optimizer)?;

        records.push(IterationRecord {
            loss,
            dice_loss,
            score,
            lesion_ratio: mean_of(ratios.into_iter()),
            lesion_voxels: voxels / settings.batch_size as f64,
        });
    }

    let summary = LocalRoundSummary {
        mean_loss: mean_of(records.iter().map(|r| r.loss)).unwrap_or(0.0),
        p_score: mean_of(records.iter().filter_map(|r| r.score)).unwrap_or(0.0),
        round_ratio: mean_of(records.iter().filter_map(|r| r.lesion_ratio)),
        round_voxels: mean_of(records.iter().map(|r| r.lesion_voxels)),
    };
    client.p_score = summary.p_score;
    client.ratio.update(summary.round_ratio);
    client.voxels.update(summary.round_voxels);
    client.log.extend(records);
    Ok(summary)
}

fn proximal_entries<'a>(
    params: &'a ParamSet,
    anchor: &'a ParamSet,
    bn_exclude: bool,
) -> impl Iterator<Item = (usize, &'a [f64], &'a [f64])> {
    params
        .entries()
        .iter()
        .zip(anchor.entries())
        .enumerate()
        .filter(move |(_, (e, _))| e.is_trainable() && is_shared(e, bn_exclude))
        .map(|(i, (e, a))| (i, e.tensor.data(), a.tensor.data()))
}

/// `‖θ − θ_anchor‖²` over shared trainable entries.
fn proximal_distance(params: &ParamSet, anchor: &ParamSet, bn_exclude: bool) -> f64 {
    proximal_entries(params, anchor, bn_exclude)
        .map(|(_, t, a)| t.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

fn add_proximal_grad(params: &mut ParamSet, anchor: &ParamSet, mu: f64, bn_exclude: bool) {
    let diffs: Vec<(usize, Tensor)> = proximal_entries(params, anchor, bn_exclude)
        .map(|(i, t, a)| {
            let d = t.iter().zip(a).map(|(x, y)| mu * (x - y)).collect::<Vec<_>>();
            (i, Tensor::new(params.tensor(i).shape().to_vec(), d).expect("same shape"))
        })
        .collect();
    for (i, d) in diffs {
        params.accumulate_grad(i, &d).expect("same shape");
    }
}
