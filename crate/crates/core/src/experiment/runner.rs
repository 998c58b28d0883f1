use rayon::prelude::*;

use super::config::{ExperimentConfig, Method};
use super::folds::{kfold_split, FoldPlan};
use crate::error::{Error, Result};
use crate::fed::{client_seed, run_federation, FederationConfig, RoundReport, StrategyPreset};
use crate::nn::{ParamSet, SegModel, SegNet};
use crate::objectives::{aggregate_metrics, confusion, MetricsReport, DEFAULT_THRESHOLD};
use crate::synth::{generate_clients, load_dataset, ClientConfig, Sample};
use crate::tensor::{NormMode, Tensor};

/// Scores whole images in eval mode and aggregates case-level counts.
pub fn evaluate<M: SegModel>(model: &M, params: &ParamSet, cases: &[&Sample]) -> Result<MetricsReport> {
    let mut params = params.clone();
    let counts = cases
        .iter()
        .map(|s| {
            let input = Tensor::stack(std::slice::from_ref(&s.image))?;
            let (pred, _) = model.forward(&mut params, &input, NormMode::Eval)?;
            let label = Tensor::stack(std::slice::from_ref(&s.label))?;
            confusion(&pred, &label, DEFAULT_THRESHOLD)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_metrics(&counts)
}

/// Result of training one method on one fold.
#[derive(Debug)]
pub struct JobOutcome {
    pub method: Method,
    pub fold: usize,
    /// Test metrics, one per client.
    pub metrics: Vec<MetricsReport>,
    /// Final models: one per client, or a single pooled model for `Central`.
    pub models: Vec<ParamSet>,
}

/// Data, folds and model for a configured experiment.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: SegNet,
    /// Cases of each client, ordered by case id.
    pub data: Vec<Vec<Sample>>,
    pub plan: FoldPlan,
}

impl Experiment {
    /// Generates (or loads) the client datasets and the fold plan.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = match &config.dataset {
            Some(dir) => load_clients(dir, &config.clients)?,
            None => generate_clients(&config.clients)?,
        };
        Self::with_data(config, data)
    }

    pub fn with_data(config: ExperimentConfig, data: Vec<Vec<Sample>>) -> Result<Self> {
        config.validate()?;
        if data.len() != config.clients.len() {
            return Err(Error::Config(format!(
                "{} client datasets for {} configured clients",
                data.len(),
                config.clients.len()
            )));
        }
        let counts: Vec<usize> = data.iter().map(Vec::len).collect();
        let plan = kfold_split(&counts, config.folds, config.seed)?;
        let model = SegNet::new(config.model.clone())?;
        Ok(Self { config, model, data, plan })
    }

    fn cases(&self, client: usize, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| self.data[client][i].clone()).collect()
    }

    fn test_cases(&self, client: usize, fold: usize) -> Vec<&Sample> {
        self.plan[fold][client].test.iter().map(|&i| &self.data[client][i]).collect()
    }

    /// Trains `method` on the training cases of `fold` and evaluates on its
    /// test cases. Round reports reach `observer` in a fixed order.
    pub fn run(
        &self,
        method: Method,
        fold: usize,
        observer: &mut dyn FnMut(&RoundReport) -> Result<()>,
    ) -> Result<JobOutcome> {
        if fold >= self.plan.len() {
            return Err(Error::InvalidArgument(format!(
                "fold {fold} out of range for {} folds",
                self.plan.len()
            )));
        }
        let fed = self.config.federation(fold);
        let n = self.data.len();
        let train: Vec<Vec<Sample>> = (0..n).map(|c| self.cases(c, &self.plan[fold][c].train)).collect();

        let models = match method {
            Method::Single => self.run_single(&train, &fed, observer)?,
            Method::Central => {
                let pooled: Vec<Sample> = train.into_iter().flatten().collect();
                let cfg = FederationConfig {
                    client_seeds: Some(vec![client_seed(fed.seed, 0)]),
                    ..fed
                };
                let out = run_federation(&self.model, &[&pooled], &StrategyPreset::FedAvg.config(), &cfg, observer)?;
                out.clients.into_iter().map(|c| c.params).collect()
            }
            Method::Federated(preset) => {
                let views: Vec<&[Sample]> = train.iter().map(Vec::as_slice).collect();
                let out = run_federation(&self.model, &views, &self.config.strategy(preset), &fed, observer)?;
                out.clients.into_iter().map(|c| c.params).collect()
            }
        };
        let metrics = (0..n)
            .map(|c| {
                let params = &models[c.min(models.len() - 1)];
                evaluate(&self.model, params, &self.test_cases(c, fold))
                    .map_err(|e| Error::Client { client: c, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JobOutcome { method, fold, metrics, models })
    }

    /// One single-client federation per client, on the sampling stream the
    /// client would use inside a federated run.
    fn run_single(
        &self,
        train: &[Vec<Sample>],
        fed: &FederationConfig,
        observer: &mut dyn FnMut(&RoundReport) -> Result<()>,
    ) -> Result<Vec<ParamSet>> {
        let strategy = StrategyPreset::FedAvg.config();
        let job = |(c, data): (usize, &Vec<Sample>)| -> Result<(ParamSet, Vec<RoundReport>)> {
            let cfg = FederationConfig {
                client_seeds: Some(vec![client_seed(fed.seed, c)]),
                parallel: false,
                ..fed.clone()
            };
            let mut out = run_federation(&self.model, &[data.as_slice()], &strategy, &cfg, &mut |_| Ok(()))
                .map_err(|e| match e {
                    Error::Client { source, .. } => Error::Client { client: c, source },
                    e => e,
                })?;
            for r in &mut out.reports {
                for cr in &mut r.clients {
                    cr.client = c;
                }
            }
            let params = out.clients.pop().expect("one client").params;
            Ok((params, out.reports))
        };
        let runs: Vec<(ParamSet, Vec<RoundReport>)> = if fed.parallel {
            train.par_iter().enumerate().map(job).collect::<Result<_>>()?
        } else {
            train.iter().enumerate().map(job).collect::<Result<_>>()?
        };
        let mut models = Vec::with_capacity(runs.len());
        for (params, reports) in runs {
            for r in &reports {
                observer(r)?;
            }
            models.push(params);
        }
        Ok(models)
    }
}

/// Loads a saved dataset and groups its cases by client.
pub fn load_clients(dir: &std::path::Path, clients: &[ClientConfig]) -> Result<Vec<Vec<Sample>>> {
    let (manifest, samples) = load_dataset(dir)?;
    if manifest.generator_digest != ClientConfig::digest(clients) {
        log::warn!(
            "{}: dataset was generated from different client settings",
            dir.display()
        );
    }
    let mut data: Vec<Vec<Sample>> = vec![Vec::new(); clients.len()];
    for s in samples {
        let slot = data.get_mut(s.client_id).ok_or_else(|| {
            Error::Config(format!(
                "{}: case for client {} but only {} clients are configured",
                dir.display(),
                s.client_id,
                clients.len()
            ))
        })?;
        slot.push(s);
    }
    for d in &mut data {
        d.sort_by_key(|s| s.case_id);
    }
    Ok(data)
}
