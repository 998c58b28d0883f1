//! Federation engine: strategies, client-side scoring and re-weighting,
//! server-side aggregation, and the synchronous round loop.

mod aggregate;
mod client;
mod engine;
mod scoring;
mod strategy;

pub use aggregate::{aggregate, is_shared, Aggregated};
pub use client::{local_round, ClientState, IterationRecord, LocalRoundSummary, LocalSettings, RunningMean};
pub use engine::{
    client_seed, run_federation, ClientRoundReport, FederationConfig, FederationOutcome, RoundReport,
};
pub use scoring::{ability_score, ability_score_entropy, local_loss_weight, local_loss_weights, ReweightLimits};
pub use strategy::{AbilityScore, Aggregation, LocalReweight, StrategyConfig, StrategyPreset};
