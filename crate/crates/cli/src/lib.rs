//! The `bove` command-line pipeline: vocabulary building, encoding, training,
//! inference, scoring, evaluation and synthetic data generation over a flat
//! config file.

pub mod commands;
pub mod config;
pub mod pairs;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bove::BoveError;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{PipelineConfig, ScoreMode, Trainer};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<BoveError> for CliError {
    fn from(e: BoveError) -> Self {
        match e {
            BoveError::RankCap { .. } => CliError::Usage(e.to_string()),
            BoveError::Divergence { .. } | BoveError::Singular { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bove", version, about = "Bag-of-vector embeddings of dependency graphs")]
pub struct Cli {
    /// Pipeline config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores, 1 is bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Stop at the first per-sentence error instead of recording it.
    #[arg(long, global = true)]
    pub fail_fast: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count labels in the training corpus and write the vocabulary.
    BuildVocab,
    /// Encode the corpus as sparse tensors.
    Encode,
    /// Train type embeddings.
    Train {
        #[arg(long)]
        trainer: Option<Trainer>,
    },
    /// Infer a vector bag per sentence with a trained model.
    Infer,
    /// Score sentence pairs and evaluate against gold labels.
    Score {
        #[arg(long)]
        mode: Option<ScoreMode>,
    },
    /// Evaluate an existing score file.
    Eval {
        #[arg(long)]
        mode: Option<ScoreMode>,
    },
    /// Generate a synthetic corpus and its ground truth.
    Synth,
}

/// Loads the config file (if any) and applies command-line overrides.
pub fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            PipelineConfig::parse(&text, base)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.fail_fast |= cli.fail_fast;
    match &cli.command {
        Command::Train { trainer: Some(t) } => config.trainer = *t,
        Command::Score { mode: Some(m) } | Command::Eval { mode: Some(m) } => config.score_mode = *m,
        _ => {}
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", config.threads)))?;
    pool.install(|| match cli.command {
        Command::BuildVocab => commands::build_vocab(&config),
        Command::Encode => commands::encode(&config),
        Command::Train { .. } => commands::train(&config),
        Command::Infer => commands::infer(&config),
        Command::Score { .. } => commands::score(&config),
        Command::Eval { .. } => commands::eval(&config),
        Command::Synth => commands::synth(&config),
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
