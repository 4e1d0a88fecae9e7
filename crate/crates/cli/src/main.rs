//! `mlbrl` command-line front end.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlbrl_core::{LinkError, Method};

#[derive(Parser, Debug)]
#[command(name = "mlbrl", version, about = "Multi-layered Bayesian record linkage")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "mlbrl-out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a pair of blocked files with known truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a linkage sampler and write posterior samples.
    Link {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        f1: Option<PathBuf>,
        #[arg(long)]
        f2: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Score posterior samples against truth files.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Directory holding truth_blocks.csv and truth_links.csv.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit the analysis model on every imputation and combine.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        f1: Option<PathBuf>,
        #[arg(long)]
        f2: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Run the simulation grid.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict the study to one method.
        #[arg(long)]
        method: Option<Method>,
    },
}

/// A CLI-level input problem (bad flag combination, missing file, ...).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<LinkError>() {
            return match e {
                LinkError::Resource(_) => 3,
                LinkError::Numerical(_) => 4,
                LinkError::Io(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate { common, seed } => commands::simulate(&common, seed),
        Command::Link {
            common,
            seed,
            method,
            f1,
            f2,
            schema,
        } => commands::link(&common, seed, method, commands::Inputs { f1, f2, schema }),
        Command::Evaluate { common, samples, truth } => commands::evaluate(&common, samples, truth),
        Command::Analyze {
            common,
            samples,
            f1,
            f2,
            schema,
        } => commands::analyze(&common, samples, commands::Inputs { f1, f2, schema }),
        Command::Study { common, seed, method } => commands::study(&common, seed, method),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
