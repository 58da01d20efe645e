//! Experiment driver: dataset generation, training, evaluation, ablation
//! sweeps and run summaries, all configured through one flat key=value
//! config with command-line overrides.

mod config;
mod eval_cmd;
mod gen_data;
mod pipeline;
mod report_cmd;
mod sweep_cmd;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evimil_core::error::{Error, Result};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "evimil", about = "Evidential multi-instance learning experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset caches (idempotent per config and seed).
    GenData(CommonArgs),
    /// Train a model and write a self-describing run directory.
    Train(CommonArgs),
    /// Evaluate a trained run: reports, histograms, OOD-ratio sweep.
    Eval(EvalArgs),
    /// Train a grid of (value, seed) cells and aggregate mean ± sd.
    Sweep(SweepArgs),
    /// Summarize a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set train.lr=1e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for dataset.kind.
    #[arg(long)]
    dataset: Option<String>,
    /// Shorthand for run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for run.out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for model.pooling.
    #[arg(long)]
    pooling: Option<String>,
    /// Shorthand for loss.strategy; accepts s1|s2|s3 or the full names.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run directory holding the checkpoint (defaults to run.out).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Shorthand for eval.ratios, e.g. 0,0.25,0.5,0.75,1.
    #[arg(long = "ood-ratios")]
    ood_ratios: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated root seeds, one run per seed and grid value.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    /// Grid axis as key=v1,v2,..., e.g. loss.lambda1=0.1,0.05,0.01
    #[arg(long)]
    grid: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to summarize.
    #[arg(long)]
    run: PathBuf,
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for set in &self.sets {
            let (key, value) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{set}'")))?;
            out.push((key.trim().to_string(), value.trim().to_string()));
        }
        if let Some(v) = &self.dataset {
            out.push(("dataset.kind".into(), v.clone()));
        }
        if let Some(v) = self.seed {
            out.push(("run.seed".into(), v.to_string()));
        }
        if let Some(v) = &self.out {
            out.push(("run.out".into(), v.display().to_string()));
        }
        if let Some(v) = &self.pooling {
            out.push(("model.pooling".into(), v.clone()));
        }
        if let Some(v) = &self.strategy {
            let full = config::parse_strategy(v)
                .ok_or_else(|| Error::Config(format!("unknown strategy '{v}'")))?;
            out.push(("loss.strategy".into(), full.name().into()));
        }
        Ok(out)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides()?)
    }
}

fn parse_seed_list(raw: &str) -> Result<Vec<u64>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed list '{raw}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => gen_data::run(&common.load()?),
        Command::Train(common) => train_cmd::run(&common.load()?),
        Command::Eval(args) => {
            let mut overrides = args.common.overrides()?;
            if let Some(ratios) = &args.ood_ratios {
                overrides.push(("eval.ratios".into(), ratios.clone()));
            }
            let cfg = ExperimentConfig::load(args.common.config.as_deref(), &overrides)?;
            eval_cmd::run(&cfg, args.run)
        }
        Command::Sweep(args) => {
            let (key, values) = args
                .grid
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--grid expects key=v1,v2,..., got '{}'", args.grid)))?;
            let values: Vec<String> =
                values.split(',').map(|v| v.trim().to_string()).collect();
            sweep_cmd::run(&args.common.load()?, &parse_seed_list(&args.seeds)?, key.trim(), &values)
        }
        Command::Report(args) => report_cmd::run(&args.run),
    }
}

/// 0 success, 2 configuration, 3 data/IO, 4 numeric failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Data(_) => 3,
        Error::NonFiniteLoss { .. } | Error::Numeric(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
