use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use r2upp_core::Error;

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "r2upp", version, about = "Nested recurrent-residual U-Net segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. trainer.seed=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set trainer.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Enable or disable deep supervision.
    #[arg(long = "deep-supervision", value_enum)]
    deep_supervision: Option<Switch>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints and the loss history.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Independent runs with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Predict a mask for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output binary mask (PGM).
        #[arg(long)]
        out: PathBuf,
        /// Output 8-bit probability map (PGM).
        #[arg(long)]
        prob: Option<PathBuf>,
        /// Output full-precision probabilities as text, one row per line.
        #[arg(long)]
        prob_text: Option<PathBuf>,
        /// ensemble, or L1..LD for a single depth.
        #[arg(long, default_value = "ensemble")]
        mode: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint (or given predictions) against a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "ensemble")]
        mode: String,
        /// Dataset label for the report.
        #[arg(long)]
        dataset: Option<String>,
        /// Model label for the report.
        #[arg(long)]
        model: Option<String>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print parameter counts of the reference architectures and of the
    /// configured one.
    Params {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        json: bool,
    },
    /// Print the node plan of the configured architecture.
    Graph {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Shape(_) => 4,
        Error::Checkpoint(_) => 5,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("R2UPP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("R2UPP_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    match cli.command {
        Command::Train { cfg, trials } => commands::train(&cfg, trials),
        Command::Predict {
            checkpoint,
            image,
            out,
            prob,
            prob_text,
            mode,
            cfg,
        } => commands::predict(&commands::PredictArgs {
            checkpoint,
            image,
            out,
            prob,
            prob_text,
            mode,
            cfg,
        }),
        Command::Evaluate {
            checkpoint,
            manifest,
            mode,
            dataset,
            model,
            out,
            cfg,
        } => commands::evaluate(&commands::EvaluateArgs {
            checkpoint,
            manifest,
            mode,
            dataset,
            model,
            out,
            cfg,
        }),
        Command::Params { cfg, json } => commands::params(&cfg, json),
        Command::Graph { cfg } => commands::graph(&cfg),
        Command::Synth { seed, count, size, out } => commands::synth(seed, count, size, &out),
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
