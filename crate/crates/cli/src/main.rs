//! `kspace-rl`: generate phantom datasets, train DDQN acquisition agents,
//! evaluate policies and rebuild report tables.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use active_kspace::data::{generate_dataset, Dataset, Split};
use active_kspace::ddqn::{
    load_checkpoint, save_checkpoint, train_loop, Checkpoint, Evaluation, Variant,
};
use active_kspace::env::{EpisodeRecord, Reconstructor, ZeroFilled};
use active_kspace::experiment::{checkpoint_for, evaluate_kind, write_run_report};
use active_kspace::metrics::{Metric, MetricCurve};
use active_kspace::report::{export_auc_table, read_curves, write_training_log};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

pub const SEED_ENV: &str = "KS_SEED";
const CONFIG_FILE: &str = "config.json";
const CHECKPOINT_FILE: &str = "model.kqn";
const TRAINING_LOG_FILE: &str = "training_log.csv";

type Handler = fn(RunConfig) -> Result<PathBuf, CliError>;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<active_kspace::Error> for CliError {
    fn from(e: active_kspace::Error) -> Self {
        use active_kspace::Error as E;
        match e {
            E::Config(_) | E::InvalidInput(_) => CliError::Config(e.to_string()),
            E::Io { .. } | E::Format { .. } => CliError::Io(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "kspace-rl",
    version,
    about = "Active k-space column acquisition experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic phantom dataset with a split manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of phantoms.
        #[arg(long)]
        count: Option<usize>,
        /// Phantom side length.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train a DDQN agent and keep the best validation checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data, or its manifest.json
        #[arg(long)]
        data: Option<PathBuf>,
        /// dataset-specific or subject-specific.
        #[arg(long)]
        variant: Option<Variant>,
        /// Environment steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate policies and write curves, heatmaps and AUC tables.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data, or its manifest.json
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Trained network for a DDQN policy; repeat for both variants.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// train, val or test
        #[arg(long)]
        split: Option<Split>,
        /// Evaluate only the first N images of the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Rebuild AUC and significance tables from an evaluation run directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory written by `eval`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and the KS_SEED variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for run outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Threads for evaluation rollouts; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    /// Config file, then `KS_SEED`, then flags.
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            config.seed = v.trim().parse().map_err(|_| {
                CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if self.workers.is_some() {
            config.workers = self.workers;
        }
        Ok(config)
    }
}

fn finish(mut config: RunConfig) -> Result<RunConfig, CliError> {
    config.train.seed = config.seed;
    config.validate()?;
    Ok(config)
}

fn start_run(config: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let dir = config.run_dir(command);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_json()).map_err(|e| io_error(&path, e))?;
    Ok(dir)
}

fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let path =
        config.data.path.as_ref().ok_or_else(|| {
            CliError::Config("no dataset given: pass --data or set data.path".into())
        })?;
    if !path.exists() {
        return Err(CliError::Config(format!(
            "dataset path {} does not exist",
            path.display()
        )));
    }
    Ok(Dataset::load(path)?)
}

fn dims(ds: &Dataset) -> Result<(usize, usize), CliError> {
    ds.dims()
        .ok_or_else(|| CliError::Config("dataset is empty".into()))
}

fn cmd_gen_data(config: RunConfig) -> Result<PathBuf, CliError> {
    let ds = generate_dataset(
        config.data.count,
        &config.data.phantom,
        config.data.splits,
        config.seed,
    )?;
    let dir = start_run(&config, "data")?;
    ds.save(&dir)?;
    let count = |s| ds.split(s).len();
    println!(
        "wrote {} phantoms ({} train, {} val, {} test)",
        ds.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    Ok(dir)
}

fn cmd_train(config: RunConfig) -> Result<PathBuf, CliError> {
    let ds = load_dataset(&config)?;
    let (h, w) = dims(&ds)?;
    let env = config.env.resolve(h, w)?;
    let pick = |s| ds.split(s).into_iter().map(|(_, x)| x).collect::<Vec<_>>();
    let (train, val) = (pick(Split::Train), pick(Split::Val));
    let dir = start_run(&config, "train")?;
    let outcome = train_loop(&train, &val, &env, Arc::new(ZeroFilled), &config.train)?;
    let checkpoint = Checkpoint::from_training(&outcome, &env, &config.train);
    let path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&path, &checkpoint)?;
    write_training_log(&dir.join(TRAINING_LOG_FILE), &outcome.log)?;
    println!(
        "{} agent: best validation AUC {:.6e} at {} env steps; checkpoint {}",
        config.train.variant,
        outcome.best_auc,
        outcome.best_env_steps,
        path.display()
    );
    Ok(dir)
}

fn cmd_eval(config: RunConfig) -> Result<PathBuf, CliError> {
    let kinds = config.policy_kinds()?;
    if let Some(kind) = kinds.iter().find(|k| k.is_ddqn()) {
        if config.checkpoints.is_empty() {
            return Err(CliError::Config(format!(
                "policy {kind} requires a trained network: pass --checkpoint <path>"
            )));
        }
    }
    let checkpoints = config
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = load_dataset(&config)?;
    let (h, w) = dims(&ds)?;
    let env = config.env.resolve(h, w)?;
    let mut images = ds.split(config.eval_split);
    if let Some(n) = config.eval_limit {
        images.truncate(n);
    }
    if images.is_empty() {
        return Err(CliError::Config(format!(
            "the {} split is empty",
            config.eval_split
        )));
    }
    let recon: Arc<dyn Reconstructor<f64>> = Arc::new(ZeroFilled);
    let mut evaluations = Vec::new();
    for &kind in &kinds {
        let checkpoint = checkpoint_for(kind, &checkpoints)
            .map_err(|e| CliError::Config(format!("{e}: pass it with --checkpoint <path>")))?;
        evaluations.push(evaluate_kind(
            kind,
            checkpoint,
            &images,
            &env,
            recon.clone(),
            config.seed,
        )?);
    }
    let dir = start_run(&config, "eval")?;
    let report = write_run_report(&dir, &evaluations, &env)?;
    print!("{}", report.auc.summary());
    println!(
        "{} images from the {} split; learned-evaluator baseline: not available \
         (needs an external pretrained network)",
        images.len(),
        config.eval_split
    );
    Ok(dir)
}

/// Rebuilds one evaluation per `curves_<policy>.csv` file.
fn read_evaluations(run: &Path) -> Result<Vec<Evaluation>, CliError> {
    let mut files: Vec<(String, PathBuf)> = fs::read_dir(run)
        .map_err(|e| io_error(run, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let policy = name
                .strip_prefix("curves_")?
                .strip_suffix(".csv")?
                .to_string();
            Some((policy, p))
        })
        .collect();
    // Keep the evaluation order recorded in the run's config when present.
    let order = RunConfig::load(&run.join(CONFIG_FILE))
        .map(|c| c.policies)
        .unwrap_or_default();
    files.sort_by_key(|(policy, _)| {
        (
            order.iter().position(|p| p == policy).unwrap_or(usize::MAX),
            policy.clone(),
        )
    });
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no curve files",
            run.display()
        )));
    }
    files
        .into_iter()
        .map(|(policy, path)| {
            let (ids, records): (Vec<String>, Vec<EpisodeRecord<f64>>) = read_curves(&path)?
                .into_iter()
                .map(|(id, values)| {
                    let curves = Metric::ALL
                        .iter()
                        .zip(values)
                        .map(|(&m, v)| MetricCurve::new(m, v))
                        .collect::<Result<_, _>>()?;
                    let record = EpisodeRecord {
                        curves,
                        costs: Vec::new(),
                        rewards: Vec::new(),
                        actions: Vec::new(),
                    };
                    Ok((id, record))
                })
                .collect::<Result<Vec<_>, active_kspace::Error>>()?
                .into_iter()
                .unzip();
            Ok(Evaluation::new(policy, ids, records)?)
        })
        .collect()
}

fn cmd_report(config: RunConfig) -> Result<PathBuf, CliError> {
    let run = config
        .report_input
        .clone()
        .ok_or_else(|| CliError::Config("no evaluation run given: pass --run <dir>".into()))?;
    let evaluations = read_evaluations(&run)?;
    let report = export_auc_table(&evaluations)?;
    let dir = start_run(&config, "report")?;
    report.write_table(&dir.join(active_kspace::experiment::AUC_TABLE_FILE))?;
    report.write_significance(&dir.join(active_kspace::experiment::SIGNIFICANCE_FILE))?;
    print!("{}", report.summary());
    Ok(dir)
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let (config, command): (RunConfig, Handler) = match cli.command {
        Command::GenData {
            common,
            count,
            size,
        } => {
            let mut c = common.resolve()?;
            if let Some(n) = count {
                c.data.count = n;
            }
            if let Some(s) = size {
                c.data.phantom.size = s;
            }
            (c, cmd_gen_data)
        }
        Command::Train {
            common,
            data,
            variant,
            steps,
        } => {
            let mut c = common.resolve()?;
            if data.is_some() {
                c.data.path = data;
            }
            if let Some(v) = variant {
                c.train.variant = v;
            }
            if let Some(s) = steps {
                c.train.total_steps = s;
            }
            (c, cmd_train)
        }
        Command::Eval {
            common,
            data,
            policies,
            checkpoint,
            split,
            limit,
        } => {
            let mut c = common.resolve()?;
            if data.is_some() {
                c.data.path = data;
            }
            if let Some(p) = policies {
                c.policies = p;
            }
            if !checkpoint.is_empty() {
                c.checkpoints = checkpoint;
            }
            if let Some(s) = split {
                c.eval_split = s;
            }
            if limit.is_some() {
                c.eval_limit = limit;
            }
            (c, cmd_eval)
        }
        Command::Report { common, run } => {
            let mut c = common.resolve()?;
            if run.is_some() {
                c.report_input = run;
            }
            (c, cmd_report)
        }
    };
    let config = finish(config)?;
    if let Some(n) = config.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    command(config)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("outputs: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
