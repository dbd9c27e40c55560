use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use resynth_cli::config::RunConfig;
use resynth_cli::diagnose::{cmd_diagnose, DiagKind};
use resynth_cli::driver::{
    cmd_detect, cmd_eval, cmd_gen_data, cmd_train_classifier, cmd_train_score,
};
use resynth_cli::error::{CliError, Result};
use resynth_core::synth::Split;

/// Semantic out-of-distribution detection by diffusion re-synthesis.
#[derive(Parser)]
#[command(name = "resynth", version, about)]
struct Cli {
    /// Configuration file; missing file means built-in defaults.
    #[arg(long, global = true, default_value = "resynth.cfg")]
    config: PathBuf,

    /// Override one config key, e.g. --set detect.guidance.scale=4.0
    /// (repeatable, applied in order).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenData,
    /// Train the noise-prediction network on in-distribution train data.
    TrainScore,
    /// Train the classifier on in-distribution train data.
    TrainClassifier,
    /// Score one dataset split with the configured detector.
    Detect {
        /// Dataset split to score (train, val, or test).
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Evaluate a detection CSV: detector score plus logit baselines.
    Eval {
        /// Detection CSV produced by `detect`.
        #[arg(long)]
        csv: PathBuf,
        /// Validation detection CSV; enables the tandem score with its
        /// confidence band calibrated on this file's baseline scores.
        #[arg(long)]
        band_from: Option<PathBuf>,
    },
    /// Run one diagnostic and write its CSV.
    Diagnose {
        /// One of: acc-vs-t, degradation-curves, cutpoint-sweep,
        /// steps-sweep, aes-threshold-table, cleangrad-ablation.
        #[arg(long)]
        kind: String,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = if cli.config.exists() {
        let text = std::fs::read_to_string(&cli.config)
            .map_err(|e| CliError::io(&cli.config, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => {
                CliError::Config(format!("{}: {msg}", cli.config.display()))
            }
            other => other,
        })?
    } else {
        RunConfig::default()
    };
    cfg.apply_overrides(&cli.sets)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::TrainScore => cmd_train_score(&cfg),
        Command::TrainClassifier => cmd_train_classifier(&cfg),
        Command::Detect { split } => {
            let split = Split::parse(split).map_err(CliError::from)?;
            cmd_detect(&cfg, split).map(|_| ())
        }
        Command::Eval { csv, band_from } => cmd_eval(&cfg, csv, band_from.as_deref()),
        Command::Diagnose { kind } => {
            let kind = DiagKind::parse(kind)?;
            cmd_diagnose(&cfg, kind).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
