use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which per-client score drives ability-weighted aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbilityScore {
    /// Mean predicted probability on true lesion voxels times `(1 − Dice loss)`.
    Probability,
    /// Mean voxel entropy `−p·ln p` times `(1 − Dice loss)`.
    Entropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Uniform,
    AbilityWeighted(AbilityScore),
}

/// Client-side loss re-weighting from accumulated lesion statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalReweight {
    None,
    /// Lesion-to-brain volume ratio of training patches.
    Ratio,
    /// Lesion voxel count of training patches.
    VoxelCount,
}

/// Orthogonal protocol toggles. See [`StrategyPreset`] for the named combinations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Keep normalization entries client-private.
    pub bn_exclude: bool,
    pub aggregation: Aggregation,
    /// Proximal coefficient `μ` of the `(μ/2)‖θ − θ_global‖²` penalty.
    pub proximal_mu: Option<f64>,
    pub local_reweight: LocalReweight,
}

impl StrategyConfig {
    pub const DEFAULT_PROXIMAL_MU: f64 = 0.01;

    /// The score that feeds aggregation weights (probability-based for uniform runs,
    /// where it is only reported).
    pub fn score_kind(&self) -> AbilityScore {
        match self.aggregation {
            Aggregation::AbilityWeighted(kind) => kind,
            Aggregation::Uniform => AbilityScore::Probability,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyPreset {
    FedAvg,
    FedProx,
    FedBN,
    FedMSRW,
    /// FedBN with ability-weighted aggregation only.
    RwCa,
    /// FedBN with lesion-ratio loss re-weighting only.
    RwLt,
    /// FedMSRW with entropy-based ability scores.
    OursEnt,
    /// FedMSRW re-weighting by lesion voxel counts instead of ratios.
    OursVol,
}

impl StrategyPreset {
    pub const ALL: [StrategyPreset; 8] = [
        Self::FedAvg,
        Self::FedProx,
        Self::FedBN,
        Self::FedMSRW,
        Self::RwCa,
        Self::RwLt,
        Self::OursEnt,
        Self::OursVol,
    ];

    pub fn config(self) -> StrategyConfig {
        let fedavg = StrategyConfig {
            bn_exclude: false,
            aggregation: Aggregation::Uniform,
            proximal_mu: None,
            local_reweight: LocalReweight::None,
        };
        let fedbn = StrategyConfig {
            bn_exclude: true,
            ..fedavg
        };
        let msrw = StrategyConfig {
            aggregation: Aggregation::AbilityWeighted(AbilityScore::Probability),
            local_reweight: LocalReweight::Ratio,
            ..fedbn
        };
        match self {
            Self::FedAvg => fedavg,
            Self::FedProx => StrategyConfig {
                proximal_mu: Some(StrategyConfig::DEFAULT_PROXIMAL_MU),
                ..fedavg
            },
            Self::FedBN => fedbn,
            Self::FedMSRW => msrw,
            Self::RwCa => StrategyConfig {
                aggregation: msrw.aggregation,
                ..fedbn
            },
            Self::RwLt => StrategyConfig {
                local_reweight: LocalReweight::Ratio,
                ..fedbn
            },
            Self::OursEnt => StrategyConfig {
                aggregation: Aggregation::AbilityWeighted(AbilityScore::Entropy),
                ..msrw
            },
            Self::OursVol => StrategyConfig {
                local_reweight: LocalReweight::VoxelCount,
                ..msrw
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FedAvg => "FedAvg",
            Self::FedProx => "FedProx",
            Self::FedBN => "FedBN",
            Self::FedMSRW => "FedMSRW",
            Self::RwCa => "RW-CA",
            Self::RwLt => "RW-LT",
            Self::OursEnt => "Ours-ent",
            Self::OursVol => "Ours-vol",
        }
    }
}

impl fmt::Display for StrategyPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy preset {s:?}")))
    }
}
