use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::{FederationConfig, LocalSettings, ReweightLimits, StrategyConfig, StrategyPreset};
use crate::nn::{ModelConfig, OptimizerConfig};
use crate::synth::ClientConfig;

/// Local iterations per round at full scale.
pub const FULL_SCALE_ITERATIONS: usize = 800;

/// A row of the comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Each client trains alone on its own data.
    Single,
    /// One model trained on the pooled data of all clients.
    Central,
    Federated(StrategyPreset),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Single => "Single",
            Method::Central => "Central",
            Method::Federated(p) => p.name(),
        }
    }

    /// Table order: the two baselines, then every preset.
    pub fn all() -> Vec<Method> {
        let mut m = vec![Method::Single, Method::Central];
        m.extend(StrategyPreset::ALL.iter().map(|&p| Method::Federated(p)));
        m
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Method::Single),
            "central" => Ok(Method::Central),
            _ => s.parse().map(Method::Federated),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a cross-validated comparison needs. Stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Seeds model initialization and patch sampling. Data seeds live in
    /// the client sections.
    pub seed: u64,
    /// Federation rounds `P`.
    pub rounds: usize,
    /// Local iterations per round `Q`. Defaults to `desk_scale · 800`.
    pub iterations: Option<usize>,
    pub desk_scale: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub augment: bool,
    pub lesion_focus: f64,
    /// Cross-validation folds.
    pub folds: usize,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    /// Run the clients of a round concurrently.
    pub parallel: bool,
    /// Load cases from a directory written by `save_dataset` instead of
    /// generating them. Relative paths resolve against the config file.
    pub dataset: Option<PathBuf>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub reweight: ReweightLimits,
    pub proximal_mu: f64,
    pub clients: Vec<ClientConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            seed: 0,
            rounds: 10,
            iterations: None,
            desk_scale: 0.125,
            batch_size: 8,
            patch_size: 32,
            augment: true,
            lesion_focus: 0.0,
            folds: 2,
            output_dir: PathBuf::from("runs"),
            methods: Method::all(),
            parallel: true,
            dataset: None,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            reweight: ReweightLimits::default(),
            proximal_mu: StrategyConfig::DEFAULT_PROXIMAL_MU,
            clients: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads and validates a config file; a relative `dataset` path is
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(d), Some(parent)) = (&c.dataset, path.parent()) {
            if d.is_relative() {
                c.dataset = Some(parent.join(d));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn iterations_per_round(&self) -> usize {
        self.iterations
            .unwrap_or_else(|| (FULL_SCALE_ITERATIONS as f64 * self.desk_scale).round() as usize)
    }

    /// Total local iterations one model consumes per fold.
    pub fn budget(&self) -> usize {
        self.rounds * self.iterations_per_round()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.rounds == 0 || self.iterations_per_round() == 0 {
            return bad("rounds and iterations per round must be positive".into());
        }
        if !(self.desk_scale > 0.0) {
            return bad(format!("desk_scale must be positive, got {}", self.desk_scale));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch_size and patch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lesion_focus) {
            return bad(format!("lesion_focus must lie in [0, 1], got {}", self.lesion_focus));
        }
        if !(self.proximal_mu >= 0.0) {
            return bad(format!("proximal_mu must be non-negative, got {}", self.proximal_mu));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.clients.is_empty() {
            return bad("at least one client is required".into());
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.client_id != i {
                return bad(format!("client {i} declares client_id {}", c.client_id));
            }
            c.validate()?;
            if self.dataset.is_none() && c.n_cases < self.folds {
                return bad(format!(
                    "client {i} has {} cases, fewer than {} folds",
                    c.n_cases, self.folds
                ));
            }
            if c.image_size.iter().any(|&s| s < self.patch_size) {
                return bad(format!(
                    "client {i} images {:?} are smaller than patch_size {}",
                    c.image_size, self.patch_size
                ));
            }
        }
        self.model.validate()?;
        self.optimizer.validate()
    }

    pub fn local_settings(&self) -> LocalSettings {
        LocalSettings {
            iterations: self.iterations_per_round(),
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            augment: self.augment,
            lesion_focus: self.lesion_focus,
            optimizer: self.optimizer.clone(),
        }
    }

    /// Federation settings for `fold`; every method sees the same seed.
    pub fn federation(&self, fold: usize) -> FederationConfig {
        FederationConfig {
            rounds: self.rounds,
            local: self.local_settings(),
            reweight: self.reweight,
            seed: fold_seed(self.seed, fold),
            client_seeds: None,
            parallel: self.parallel,
        }
    }

    pub fn strategy(&self, preset: StrategyPreset) -> StrategyConfig {
        let mut s = preset.config();
        if s.proximal_mu.is_some() {
            s.proximal_mu = Some(self.proximal_mu);
        }
        s
    }
}

/// Training seed of a fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64).wrapping_mul(0xA076_1D64_78BD_642F)
}
