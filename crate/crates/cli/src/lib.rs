//! Command-line pipeline: fuse → oracle → train → evolve → bench, plus
//! synthetic-data and NSS-model utilities.

pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Failure carrying the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const EVALUATION: i32 = 4;
    pub const MISSING: i32 = 5;
    pub const STALE: i32 = 6;

    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into().replace('\n', " "),
        }
    }
}

/// Single-line, machine-parseable diagnostic.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AEERR:{}:{}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "aefuse",
    version,
    about = "Grayscale image fusion with an evolving oracle"
)]
pub struct Cli {
    /// Run configuration (key=value file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset manifest CSV; defaults to `<out>/manifest.csv`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every registered method on every pair and write the candidates.
    Fuse,
    /// Score candidates, select per-pair optima and write the cache.
    Oracle,
    /// Train the fusion network against the cached optima.
    Train,
    /// Fold a new method into the cache, keeping the better result per pair.
    Evolve {
        /// Configured method name (`method.<name>.kind=...`) or a builtin kind.
        #[arg(long)]
        method: String,
    },
    /// Compare registry methods, the oracle and the trained network.
    Bench {
        /// Model file; defaults to `<out>/model.aenet`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write a synthetic dataset and its manifest.
    GenSynthetic {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Fit an NSS model from a directory of PGM images or the bundled
    /// synthetic pristine corpus.
    FitNss {
        /// Directory of pristine PGM images.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Output model path; defaults to `<out>/nss.model`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 192)]
        size: usize,
    },
}

/// Parses arguments and runs the selected command. Help and version
/// requests are returned as `Ok(Some(text))`.
pub fn run<I, T>(args: I) -> Result<Option<String>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(Some(e.to_string())),
                _ => Err(CliError::new(
                    CliError::USAGE,
                    e.to_string().lines().next().unwrap_or("invalid arguments"),
                )),
            };
        }
    };
    commands::dispatch(cli).map(|()| None)
}
