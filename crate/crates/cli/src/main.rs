use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hfvae::data::Split;
use hfvae_cli::config::{Dataset, LearningRate, RunConfig};
use hfvae_cli::metrics::read_metrics;
use hfvae_cli::{cmd_eval, cmd_inspect_flow, cmd_train, plot, TrainOptions};

#[derive(Parser)]
#[command(name = "hfvae", version, about = "Train and inspect VAEs with Householder-flow posteriors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; flags override values from the config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Householder flow length (0 = plain VAE).
        #[arg(long = "T", short = 'T')]
        flow_length: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fixed learning rate (skips the probe over the grid).
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dataset: Option<Dataset>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the epoch cap.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Pause after this many epochs, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Continue from a checkpoint (its embedded config is used).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the best parameters of a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Noise draws per datum.
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Print the posterior covariance implied by the flow for one input.
    InspectFlow {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Draw ELBO/RE/KL curves from a metrics file as SVG.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            flow_length,
            seed,
            lr,
            dataset,
            out,
            max_epochs,
            stop_after,
            resume,
        } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(t) = flow_length {
                cfg.flow_length = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(lr) = lr {
                cfg.lr = LearningRate::Fixed(lr);
            }
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
            }
            let summary = cmd_train(&cfg, &TrainOptions { resume, stop_after })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { checkpoint, split, samples } => {
            let report = cmd_eval(&checkpoint, split, samples)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::InspectFlow { checkpoint, index, split } => {
            let report = cmd_inspect_flow(&checkpoint, split, index)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Plot { metrics, out } => {
            let records = read_metrics(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            std::fs::write(&out, plot::render_svg(&records)).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
