//! `eigenhearts` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eigenhearts::{Error, ErrorKind, TruncationRule};

#[derive(Parser, Debug)]
#[command(
    name = "eigenhearts",
    version,
    about = "Class-wise SVD bases and CNN classification of image ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct RuleArgs {
    /// Keep this many leading directions per class (repeatable).
    #[arg(long = "rank")]
    ranks: Vec<usize>,
    /// Smallest rank whose relative reconstruction error is at most this (repeatable).
    #[arg(long = "tolerance")]
    tolerances: Vec<f64>,
    /// Choose each class rank by the optimal hard threshold.
    #[arg(long)]
    gavish: bool,
}

impl RuleArgs {
    fn rules(&self) -> Vec<TruncationRule> {
        let mut rules: Vec<_> = self
            .ranks
            .iter()
            .map(|&r| TruncationRule::FixedRank(r))
            .collect();
        rules.extend(
            self.tolerances
                .iter()
                .map(|&t| TruncationRule::EnergyTolerance(t)),
        );
        if self.gavish {
            rules.push(TruncationRule::GavishDonoho);
        }
        rules
    }

    fn is_empty(&self) -> bool {
        self.ranks.is_empty() && self.tolerances.is_empty() && !self.gavish
    }
}

#[derive(Args, Debug, Clone, Default)]
struct TrainArgs {
    /// Training epochs (default 80).
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (default 128).
    #[arg(long)]
    batch: Option<usize>,
    /// RMSprop learning rate (default 1e-3).
    #[arg(long)]
    lr: Option<f64>,
    /// Layer widths `c1,c2,c3,hidden`.
    #[arg(long)]
    arch: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with its split manifest.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a dataset and report its classes, samples and split.
    IngestCheck {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build per-class bases from the training samples and write a library file.
    BuildBasis {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Library file; with several rules each gets a `_<rule>` suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the singular spectrum of every class as CSV.
    Spectrum {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project every frame onto its class basis and export the result as PGM.
    Project {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network on the training partition.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Train on projections onto this library.
        #[arg(long)]
        library: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained network (and the residual baseline, given a library).
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the raw arm and every truncation arm with repeated training.
    Experiment {
        /// `key=value` experiment file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long, conflicts_with = "spec")]
        data: Option<PathBuf>,
        /// Synthetic generator settings to use instead of a directory.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        rules: RuleArgs,
        /// Training runs per arm (default 5).
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
        /// Global seed; run i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
