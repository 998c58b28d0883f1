//! Cross-validated strategy comparisons and their on-disk artifacts.
//!
//! A comparison directory holds:
//!
//! * `config.toml`: the resolved configuration;
//! * `folds.json`: the case indices of every fold and client;
//! * `ratios.csv`: per-case lesion ratios of the generated data;
//! * `rounds.jsonl`: one [`RoundRecord`] per method, fold and round;
//! * `metrics.jsonl`: one [`MetricsRecord`] per method, fold and client;
//! * `<method>/fold<f>/client<i>.fseg` (or `model.fseg` for `Central`);
//! * `table.csv` and `table.txt`.
//!
//! Jobs run one after another and are written by a single writer, so every
//! file is byte-reproducible for a given config.

mod config;
mod folds;
mod runner;
mod table;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{fold_seed, ExperimentConfig, Method, FULL_SCALE_ITERATIONS};
pub use folds::{kfold_split, ClientSplit, FoldPlan};
pub use runner::{evaluate, load_clients, Experiment, JobOutcome};
pub use table::{ComparisonTable, MetricCells, TableRow};

use crate::error::{Error, Result};
use crate::fed::{ClientRoundReport, RoundReport};
use crate::nn::checkpoint;
use crate::objectives::MetricsReport;
use crate::synth::lesion_voxels;

/// A line of `rounds.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub method: Method,
    pub fold: usize,
    pub round: usize,
    pub clients: Vec<ClientRoundReport>,
}

/// A line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub fold: usize,
    pub client: usize,
    pub report: MetricsReport,
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path,
        })
    }

    fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Directory holding the checkpoints of one job.
pub fn job_dir(out: &Path, method: Method, fold: usize) -> PathBuf {
    out.join(method.name()).join(format!("fold{fold}"))
}

/// Checkpoint file of `client` for a job; `Central` jobs share one model.
pub fn checkpoint_path(out: &Path, method: Method, fold: usize, client: usize) -> PathBuf {
    let dir = job_dir(out, method, fold);
    match method {
        Method::Central => dir.join("model.fseg"),
        _ => dir.join(format!("client{client}.fseg")),
    }
}

fn save_models(out: &Path, job: &JobOutcome) -> Result<()> {
    let dir = job_dir(out, job.method, job.fold);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (c, params) in job.models.iter().enumerate() {
        checkpoint::save(params, &checkpoint_path(out, job.method, job.fold, c))?;
    }
    Ok(())
}

fn ratios_csv(exp: &Experiment) -> String {
    let mut s = String::from("client,case,lesion_ratio,lesion_voxels,brain_voxels\n");
    for cases in &exp.data {
        for c in cases {
            let brain = c.brain_mask.sum() as usize;
            let ratio = c.lesion_ratio().map_or("NA".to_string(), |r| r.to_string());
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.client_id,
                c.case_id,
                ratio,
                lesion_voxels(&c.label),
                brain
            ));
        }
    }
    s
}

fn observer<'a>(log: &'a mut JsonLines, method: Method, fold: usize) -> impl FnMut(&RoundReport) -> Result<()> + 'a {
    move |r: &RoundReport| {
        log.write(&RoundRecord {
            method,
            fold,
            round: r.round,
            clients: r.clients.clone(),
        })
    }
}

/// Runs every configured method on every fold and writes the artifacts
/// listed in the module docs to `out`.
///
/// A method that fails on any fold gets an error row; the remaining methods
/// still run.
pub fn compare(exp: &Experiment, out: &Path) -> Result<ComparisonTable> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), exp.config.to_toml()?)?;
    write_file(&out.join("folds.json"), serde_json::to_string_pretty(&exp.plan)?)?;
    write_file(&out.join("ratios.csv"), ratios_csv(exp))?;
    let mut rounds = JsonLines::create(out.join("rounds.jsonl"))?;
    let mut metrics = JsonLines::create(out.join("metrics.jsonl"))?;

    let mut rows = Vec::with_capacity(exp.config.methods.len());
    for &method in &exp.config.methods {
        let mut per_fold = Vec::with_capacity(exp.config.folds);
        let mut failure = None;
        for fold in 0..exp.config.folds {
            log::info!("{method}: fold {fold}");
            let job = exp.run(method, fold, &mut observer(&mut rounds, method, fold));
            match job {
                Ok(job) => {
                    save_models(out, &job)?;
                    for (client, report) in job.metrics.iter().enumerate() {
                        metrics.write(&MetricsRecord {
                            method,
                            fold,
                            client,
                            report: report.clone(),
                        })?;
                    }
                    per_fold.push(job.metrics);
                }
                Err(e) => {
                    log::error!("{method} failed on fold {fold}: {e}");
                    failure = Some(format!("fold {fold}: {e}"));
                    break;
                }
            }
        }
        rows.push(match failure {
            None => TableRow::from_folds(method, &per_fold),
            Some(e) => TableRow { method, cells: Err(e) },
        });
    }
    let table = ComparisonTable {
        clients: exp.data.len(),
        rows,
    };
    write_file(&out.join("table.csv"), table.to_csv())?;
    write_file(&out.join("table.txt"), table.to_text())?;
    Ok(table)
}

/// Trains one method on one fold, writing `rounds.jsonl`, `metrics.json` and
/// checkpoints under `<out>/<method>/fold<f>/`.
pub fn train(exp: &Experiment, method: Method, fold: usize, out: &Path) -> Result<JobOutcome> {
    let dir = job_dir(out, method, fold);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rounds = JsonLines::create(dir.join("rounds.jsonl"))?;
    let job = exp.run(method, fold, &mut observer(&mut rounds, method, fold))?;
    save_models(out, &job)?;
    write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&job.metrics)?)?;
    Ok(job)
}
