use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedseg_core::experiment::{self, evaluate, Experiment, ExperimentConfig, Method};
use fedseg_core::gradcheck::check_model;
use fedseg_core::nn::checkpoint;
use fedseg_core::synth::{generate_clients, load_dataset, save_dataset, ClientConfig, Sample};
use fedseg_core::{ModelConfig, SegModel, SegNet};

#[derive(Parser)]
#[command(name = "fedseg", version, about = "Federated lesion segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured client datasets and write them to disk.
    GenData {
        config: PathBuf,
        /// Target directory [default: <output_dir>/data].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one method on one cross-validation fold.
    Train {
        config: PathBuf,
        /// Single, Central, or a strategy preset such as FedAvg or FedMSRW.
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output directory [default: output_dir from the config].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured method on every fold and write the comparison table.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a saved dataset and print the metrics as JSON.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Only cases of this client.
        #[arg(long)]
        client: Option<usize>,
        /// Only these case ids (comma separated).
        #[arg(long, value_delimiter = ',')]
        cases: Vec<usize>,
    },
    /// Compare backpropagated gradients of the network against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Channels of each block.
        #[arg(long, value_delimiter = ',', default_value = "4,8")]
        blocks: Vec<usize>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn gen_data(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(config)?;
    let out = out.unwrap_or_else(|| config.output_dir.join("data"));
    let clients = generate_clients(&config.clients)?;
    let all: Vec<Sample> = clients.iter().flatten().cloned().collect();
    let manifest = save_dataset(&all, &out, &ClientConfig::digest(&config.clients))?;
    for (i, cases) in clients.iter().enumerate() {
        let ratios: Vec<f64> = cases.iter().filter_map(Sample::lesion_ratio).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("client {i}: {} cases, lesion ratio {lo:.4}..{hi:.4}", cases.len());
    }
    println!("wrote {} cases to {}", manifest.cases.len(), out.display());
    Ok(())
}

fn train(config: &Path, strategy: &str, fold: usize, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(config)?;
    let method: Method = strategy.parse()?;
    let out = out.unwrap_or_else(|| config.output_dir.clone());
    let exp = Experiment::new(config)?;
    let t = Instant::now();
    let job = experiment::train(&exp, method, fold, &out)?;
    for (c, m) in job.metrics.iter().enumerate() {
        println!(
            "client {c}: C-Dice {:.2}  V-Dice {:.2}  V-TPR {:.2}  V-FPR {:.2}",
            100.0 * m.c_dice,
            100.0 * m.v_dice,
            100.0 * m.v_tpr,
            100.0 * m.v_fpr
        );
    }
    println!(
        "{method} fold {fold} done in {:.1}s; artifacts in {}",
        t.elapsed().as_secs_f64(),
        experiment::job_dir(&out, method, fold).display()
    );
    Ok(())
}

fn compare(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(config)?;
    let out = out.unwrap_or_else(|| config.output_dir.clone());
    let exp = Experiment::new(config)?;
    let table = experiment::compare(&exp, &out)?;
    print!("{}", table.to_text());
    let failed = table.rows.iter().filter(|r| r.cells.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} methods failed; see {}", table.rows.len(), out.join("table.txt").display());
    }
    Ok(())
}

fn eval(checkpoint_path: &Path, dataset: &Path, client: Option<usize>, cases: &[usize]) -> Result<()> {
    let params = checkpoint::load(checkpoint_path)?;
    let model = SegNet::new(ModelConfig::infer_from(&params)?)?;
    params
        .check_compatible(&model.init_params(0)?)
        .with_context(|| format!("{} is not a segmentation network checkpoint", checkpoint_path.display()))?;
    let (_, samples) = load_dataset(dataset)?;
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| client.is_none_or(|c| s.client_id == c))
        .filter(|s| cases.is_empty() || cases.contains(&s.case_id))
        .collect();
    if selected.is_empty() {
        bail!("no cases in {} match the selection", dataset.display());
    }
    let report = evaluate(&model, &params, &selected)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn gradcheck(seeds: u64, step: f64, tolerance: f64, blocks: Vec<usize>) -> Result<()> {
    let net = SegNet::new(ModelConfig {
        blocks,
        ..ModelConfig::default()
    })?;
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let report = check_model(&net, seed, step)?;
        let at = report.worst.map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
        println!("seed {seed:>3}: max rel error {:.3e} at {at}", report.max_rel_error);
        worst = worst.max(report.max_rel_error);
    }
    if worst >= tolerance {
        bail!("max relative error {worst:.3e} exceeds {tolerance:.0e}");
    }
    println!("max relative error {worst:.3e} < {tolerance:.0e}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::GenData { config, out } => gen_data(&config, out),
        Command::Train {
            config,
            strategy,
            fold,
            out,
        } => train(&config, &strategy, fold, out),
        Command::Compare { config, out } => compare(&config, out),
        Command::Eval {
            checkpoint,
            dataset,
            client,
            cases,
        } => eval(&checkpoint, &dataset, client, &cases),
        Command::Gradcheck {
            seeds,
            step,
            tolerance,
            blocks,
        } => gradcheck(seeds, step, tolerance, blocks),
    }
}
