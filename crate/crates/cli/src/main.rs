mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Settings, UsageError};

#[derive(Parser, Debug)]
#[command(name = "ulmfit", version, about = "AWD-LSTM pretraining, ULMFiT fine-tuning and degradation benchmarks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable; wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model size: full or tiny.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output path (checkpoint, report or CSV, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a language model from scratch on a text corpus, one document per line.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Adapt a pretrained language model to target-domain text.
    FinetuneLm {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled CSV whose texts form the target corpus.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        dataset: Option<PathBuf>,
        /// Plain-text target corpus, one document per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train a classifier on a fine-tuned language model with gradual unfreezing.
    FinetuneClf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
    },
    /// Accuracy and mean loss of a classifier on a labeled CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Label and probability for each text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        texts: Vec<String>,
    },
    /// Fine-tune and evaluate repeatedly on shrinking training fractions.
    Degrade {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// The highest-loss examples of a labeled CSV.
    TopLosses {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

pub enum Failure {
    Usage(String),
    Runtime(ulmfit::Error),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<ulmfit::Error> for Failure {
    fn from(e: ulmfit::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn settings(common: &Common) -> Result<Settings, UsageError> {
    let mut s = match &common.config {
        Some(p) => {
            if !p.exists() {
                return Err(UsageError(format!("input path does not exist: {}", p.display())));
            }
            Settings::load(p)?
        }
        None => Settings::default(),
    };
    for pair in &common.set {
        s.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        s.set("seed", &seed.to_string())?;
    }
    if let Some(p) = &common.preset {
        s.set("preset", p)?;
    }
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings(&cli.common)
        .map_err(Failure::from)
        .and_then(|s| commands::run(&cli.command, &s, cli.common.out.as_deref()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
