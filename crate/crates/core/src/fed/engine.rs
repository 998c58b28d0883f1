use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, is_shared};
use super::client::{local_round, ClientState, LocalRoundSummary, LocalSettings};
use super::scoring::{local_loss_weights, ReweightLimits};
use super::strategy::{Aggregation, LocalReweight, StrategyConfig};
use crate::error::{Error, Result};
use crate::nn::{ParamSet, SegModel};
use crate::synth::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local: LocalSettings,
    pub reweight: ReweightLimits,
    /// Seed of the shared initial model.
    pub seed: u64,
    /// Per-client sampling seeds; derived from `seed` when absent.
    pub client_seeds: Option<Vec<u64>>,
    /// Run the clients of a round on the rayon pool.
    pub parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            local: LocalSettings::default(),
            reweight: ReweightLimits::default(),
            seed: 0,
            client_seeds: None,
            parallel: true,
        }
    }
}

/// Sampling seed of client `index` when none is configured explicitly.
pub fn client_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundReport {
    pub client: usize,
    /// Mean ability score over the round.
    pub p_score: f64,
    /// Accumulated lesion ratio after the round.
    pub vr: Option<f64>,
    /// Accumulated lesion voxels per patch after the round.
    pub voxels: Option<f64>,
    /// Normalized aggregation weight.
    pub aggregation_weight: f64,
    /// Loss multiplier used during this round.
    pub loss_weight: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundReport>,
}

#[derive(Debug)]
pub struct FederationOutcome {
    /// Final client states: shared entries hold the last aggregate, excluded
    /// normalization entries stay client-private.
    pub clients: Vec<ClientState>,
    pub reports: Vec<RoundReport>,
}

impl FederationOutcome {
    pub fn params(&self) -> Vec<&ParamSet> {
        self.clients.iter().map(|c| &c.params).collect()
    }
}

/// Synchronous federated training.
///
/// Every round, each client trains locally from the current global model,
/// the server aggregates shared entries (uniformly or by ability score) and
/// broadcasts them back, and loss weights for the next round are derived from
/// the clients' accumulated lesion statistics. `observer` sees each report as
/// soon as its round completes.
///
/// Clients own their random streams and the server sums in client order, so
/// results do not depend on whether clients run concurrently.
pub fn run_federation<M: SegModel>(
    model: &M,
    datasets: &[&[Sample]],
    strategy: &StrategyConfig,
    config: &FederationConfig,
    observer: &mut dyn FnMut(&RoundReport) -> Result<()>,
) -> Result<FederationOutcome> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("federation needs at least one client".into()));
    }
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("federation needs at least one round".into()));
    }
    if let Some(mu) = strategy.proximal_mu {
        if !(mu >= 0.0) {
            return Err(Error::Config(format!("proximal mu must be non-negative, got {mu}")));
        }
    }
    config.local.optimizer.validate()?;
    let seeds: Vec<u64> = match &config.client_seeds {
        Some(s) if s.len() == datasets.len() => s.clone(),
        Some(s) => {
            return Err(Error::Config(format!(
                "{} client seeds for {} clients",
                s.len(),
                datasets.len()
            )))
        }
        None => (0..datasets.len()).map(|i| client_seed(config.seed, i)).collect(),
    };

    let mut global = model.init_params(config.seed)?;
    let mut clients: Vec<ClientState> = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| ClientState::new(i, global.clone(), ChaCha8Rng::seed_from_u64(s)))
        .collect();
    let mut reports = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let used_weights: Vec<f64> = clients.iter().map(|c| c.loss_weight).collect();
        let train = |(client, data): (&mut ClientState, &&[Sample])| -> Result<LocalRoundSummary> {
            local_round(model, client, &global, data, &config.local, strategy).map_err(|e| Error::Client {
                client: client.index,
                source: Box::new(e),
            })
        };
        let summaries: Vec<LocalRoundSummary> = if config.parallel {
            clients.par_iter_mut().zip(datasets.par_iter()).map(train).collect::<Result<_>>()?
        } else {
            clients.iter_mut().zip(datasets.iter()).map(train).collect::<Result<_>>()?
        };

        let raw_weights: Vec<f64> = match strategy.aggregation {
            Aggregation::Uniform => vec![1.0; clients.len()],
            Aggregation::AbilityWeighted(_) => clients.iter().map(|c| c.p_score).collect(),
        };
        let aggregated = {
            let views: Vec<&ParamSet> = clients.iter().map(|c| &c.params).collect();
            aggregate(&views, &raw_weights, strategy.bn_exclude)?
        };
        for c in &mut clients {
            c.params
                .copy_values_from(&aggregated.params, |e| is_shared(e, strategy.bn_exclude))?;
        }
        global = aggregated.params;

        let stats: Vec<Option<f64>> = match strategy.local_reweight {
            LocalReweight::None => vec![None; clients.len()],
            LocalReweight::Ratio => clients.iter().map(|c| c.ratio.value).collect(),
            LocalReweight::VoxelCount => clients.iter().map(|c| c.voxels.value).collect(),
        };
        for (c, w) in clients.iter_mut().zip(local_loss_weights(&stats, &config.reweight)) {
            c.loss_weight = w;
        }

        let report = RoundReport {
            round,
            clients: clients
                .iter()
                .zip(&summaries)
                .zip(aggregated.weights.iter().zip(&used_weights))
                .map(|((c, s), (&aw, &lw))| ClientRoundReport {
                    client: c.index,
                    p_score: s.p_score,
                    vr: c.ratio.value,
                    voxels: c.voxels.value,
                    aggregation_weight: aw,
                    loss_weight: lw,
                    mean_loss: s.mean_loss,
                })
                .collect(),
        };
        observer(&report)?;
        reports.push(report);
    }
    Ok(FederationOutcome { clients, reports })
}
