mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use cba::policy::Normalization;
use cba::trainer::Method;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "cba", version, about = "Complexity-boosted adaptive CTC training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Cba)]
        mode: Mode,
    },
    /// Evaluate a model file on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path (default: next to the model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation configuration and tabulate test TER.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (gen-data) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    policy: Option<PolicyMode>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref())?.resolve(&Overrides {
            seed: self.seed,
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            lambda: self.lambda,
            policy: self.policy.map(|p| match p {
                PolicyMode::Minmax => Normalization::MinMax,
                PolicyMode::Rank => Normalization::Rank,
            }),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    DaOnly,
    Interctc,
    Cba,
}

impl From<Mode> for Method {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Baseline => Method::Baseline,
            Mode::DaOnly => Method::DaOnly,
            Mode::Interctc => Method::InterCtc,
            Mode::Cba => Method::Cba,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyMode {
    Minmax,
    Rank,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CBA_LOG_LEVEL", "info")).init();
    match Cli::parse().command {
        Command::GenData { common } => {
            let cfg = common.resolve()?;
            let out = common.out.unwrap_or_else(|| cfg.run.out_dir.join("corpus.cbad"));
            commands::gen_data(&cfg, &out)
        }
        Command::Train { common, data, mode } => {
            let cfg = common.resolve()?;
            commands::train(&cfg, &data, mode.into(), common.out.as_deref())
        }
        Command::Eval { model, data, out } => commands::eval(&model, &data, out.as_deref()),
        Command::Ablate { common, data } => {
            let cfg = common.resolve()?;
            commands::ablate(&cfg, &data, common.out.as_deref())
        }
    }
}
