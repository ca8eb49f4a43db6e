//! `gossipspeech`: generate a synthetic corpus, train centrally or with a
//! peer-to-peer protocol, plot the metrics and evaluate checkpoints.

mod commands;
mod config;
mod plot;

use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use gossipspeech::{Method, Workers};
use std::path::PathBuf;
use std::process::ExitCode;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad config or unusable input data (exit 2).
    Data(anyhow::Error),
    /// Training or output failure (exit 3).
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Data(e) | Failure::Runtime(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(name = "gossipspeech", version, about = "Peer-to-peer gossip training simulator for CTC acoustic models")]
struct Cli {
    /// Worker threads for per-agent work [default: available parallelism]
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides every seed in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus, manifest and partition spec
    GenData {
        /// Experiment config (JSON); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory [default: config data_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model on the pooled data
    TrainCentral {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: config out_dir]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train one model per agent with a peer-to-peer protocol
    TrainP2p {
        #[arg(long)]
        config: Option<PathBuf>,
        /// pull_gossip or p2p_bn [default: config run.method]
        #[arg(long, value_parser = parse_p2p_method)]
        method: Option<Method>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Plot average validation loss and WER per round as SVG
    Plot {
        /// One or more metrics CSVs; each becomes a series named by file stem
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-evaluate every agent of a checkpoint on a corpus
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Supplies the data settings (alphabet, padding)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Partition spec [default: partition.json next to the manifest]
        #[arg(long)]
        partition: Option<PathBuf>,
    },
}

fn parse_p2p_method(s: &str) -> Result<Method, String> {
    match s.parse::<Method>()? {
        Method::Central => Err("use train-central for the centralized baseline".into()),
        m => Ok(m),
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path.map(PathBuf::as_path)).map_err(Failure::Data)?;
    if let Some(seed) = seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let workers = cli.workers.map_or_else(Workers::available, Workers::new);
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            cfg.validate().map_err(Failure::Data)?;
            let out = out.unwrap_or_else(|| cfg.data_dir.clone());
            commands::gen_data(&cfg, &out)
        }
        Command::TrainCentral { config, out, resume } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            commands::train(cfg, Method::Central, &out, resume.as_deref(), workers)
        }
        Command::TrainP2p { config, method, out, resume } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let method = method.unwrap_or(cfg.run.method);
            if method == Method::Central {
                return Err(Failure::Data(anyhow::anyhow!(
                    "config selects the central method; pass --method pull_gossip or p2p_bn"
                )));
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            commands::train(cfg, method, &out, resume.as_deref(), workers)
        }
        Command::Plot { metrics, out } => commands::plot(&metrics, &out),
        Command::Eval { checkpoint, manifest, config, partition } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let args = commands::EvalArgs {
                checkpoint: &checkpoint,
                manifest: &manifest,
                partition: partition.as_deref(),
            };
            commands::eval(cfg, args, workers)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GOSSIPSPEECH_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
