//! Batch experiment front end. Every subcommand reads a TOML experiment
//! config, writes a self-describing run directory (config copy, hash, seed,
//! versions) and exits 0 on success, 2 on configuration errors and 1 on
//! runtime failures.

mod artifacts;
mod calibrate;
mod config;
mod dataset;
mod ensemble;
mod generate;
mod hpo_run;
mod hybrid_run;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{resolve, CResult, Overrides};

#[derive(Parser)]
#[command(
    name = "bdann",
    version,
    about = "Staged adversarial transfer learning with calibrated uncertainty",
    after_help = "Environment: BDANN_OUT sets the output root for relative --out paths; \
                  BDANN_WORKERS sets the default worker count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; relative paths land under BDANN_OUT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensemble members.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the synthetic target training size (75/150/250/500).
    #[arg(long)]
    ablation: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            workers: self.workers,
            ablation: self.ablation,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark splits as CSV.
    Generate(Common),
    /// Train one strategy under one seed.
    Train(Common),
    /// Train a strategy (or all three) across an ensemble of seeds.
    Ensemble(Common),
    /// Evaluate a saved model on the config's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Saved model file.
        #[arg(long)]
        model: PathBuf,
    },
    /// Reliability curves for a variational model's uncertainty.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Saved model file; a fresh model is trained when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Search the alignment-stage hyperparameters.
    Hpo(Common),
    /// Train a residual corrector on top of a base-prediction column.
    Hybrid(Common),
}

fn dispatch(cli: &Cli) -> CResult<()> {
    let (common, name): (&Common, &str) = match &cli.command {
        Command::Generate(c) => (c, "generate"),
        Command::Train(c) => (c, "train"),
        Command::Ensemble(c) => (c, "ensemble"),
        Command::Evaluate { common, .. } => (common, "evaluate"),
        Command::Calibrate { common, .. } => (common, "calibrate"),
        Command::Hpo(c) => (c, "hpo"),
        Command::Hybrid(c) => (c, "hybrid"),
    };
    let resolved = resolve(
        &common.config,
        &common.overrides(),
        &format!("{name}-run"),
    )?;
    match &cli.command {
        Command::Generate(_) => generate::cmd_generate(&resolved),
        Command::Train(_) => train::cmd_train(&resolved, &common.config),
        Command::Ensemble(_) => ensemble::cmd_ensemble(&resolved, &common.config),
        Command::Evaluate { model, .. } => {
            train::cmd_evaluate(&resolved, &common.config, model)
        }
        Command::Calibrate { model, .. } => {
            calibrate::cmd_calibrate(&resolved, &common.config, model.as_deref())
        }
        Command::Hpo(_) => hpo_run::cmd_hpo(&resolved, &common.config),
        Command::Hybrid(_) => hybrid_run::cmd_hybrid(&resolved, &common.config),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
