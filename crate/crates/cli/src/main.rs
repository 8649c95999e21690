mod commands;
mod data;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use data::DataArgs;
use error::{CliError, CliResult};
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "triplet-gcn", version, about = "Train and evaluate triplet-graph GCN risk models")]
struct Cli {
    /// Seed for data generation, splitting, initialization and dropout
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Settings file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single-threaded sparse products
    #[arg(long, global = true)]
    deterministic: bool,
    /// Override one setting, e.g. `--set epochs=50` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    /// The held-out split that `train` did not see
    Test,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus its training history
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with a `.history.csv` suffix
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a labeled cohort with a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "all")]
        subset: Subset,
        /// Metrics JSON output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-patient probabilities
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-nearest-neighbour baseline on the same split as `train`
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        s.apply_text(&text)?;
    }
    for o in &cli.overrides {
        s.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string())?;
    }
    if cli.deterministic {
        s.train.deterministic = true;
    }
    s.validate()?;
    Ok(s)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut s = settings(&cli)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&s, &out),
        Command::Train { data, out, history } => {
            let history = history.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".history.csv");
                p.into()
            });
            commands::train(&s, &data, &out, &history)
        }
        Command::Eval { checkpoint, data, subset, out } => commands::eval(&s, &checkpoint, &data, subset, out.as_deref()),
        Command::Predict { checkpoint, data, out } => commands::predict(&checkpoint, &data, &out),
        Command::Baseline { data, k, out } => {
            if let Some(k) = k {
                s.set("k", &k.to_string())?;
                s.validate()?;
            }
            commands::baseline(&s, &data, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
