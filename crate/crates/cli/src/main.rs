//! `graphvar`: build graphs, fit models, run evaluation sweeps and self
//! checks from one experiment config file.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphvar::checks::SelftestConfig;
use graphvar::{EstimationMode, ModelFamily};

use crate::config::{ExperimentConfig, ProductSetting};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "graphvar", version, about = "Graph VAR forecasting experiments")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every config-driven command. Each one overrides the
/// matching config key.
#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `product`: cartesian, kronecker or strong.
    #[arg(long)]
    product: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build station and feature graphs (normalized Laplacians) and write
    /// them as edge lists with a readable summary.
    BuildGraphs(Common),
    /// Fit one model on a range of the panel.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Overrides `fit.family`.
        #[arg(long)]
        family: Option<ModelFamily>,
        /// Overrides `fit.p`.
        #[arg(short = 'P', long = "lags")]
        p: Option<usize>,
        /// Overrides `fit.k`.
        #[arg(short = 'K', long = "taps")]
        k: Option<usize>,
        /// Overrides `fit.mode`: fixed or joint.
        #[arg(long)]
        mode: Option<EstimationMode>,
    },
    /// Run the sliding-window evaluation sweep and write report.csv and
    /// report.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Overrides `evaluation.families` (comma separated).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        families: Option<Vec<ModelFamily>>,
        /// Overrides `evaluation.mode`: fixed or joint.
        #[arg(long)]
        mode: Option<EstimationMode>,
        /// Overrides `evaluation.in_sample_lens` (comma separated).
        #[arg(long, value_delimiter = ',')]
        in_sample: Option<Vec<usize>>,
        /// Overrides `evaluation.n_iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run the numerical self checks and print a table.
    Selftest {
        /// Optional config; only its `seed` is used.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Perturb the analytic feature-graph gradient; the gradient check
        /// must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Generate a synthetic panel, its graphs and the generating model.
    Synth(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = &common.product {
        cfg.product = ProductSetting::Preset(p.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::BuildGraphs(common) => commands::build_graphs(&load(&common)?)?,
        Command::Synth(common) => commands::synth(&load(&common)?)?,
        Command::Fit {
            common,
            family,
            p,
            k,
            mode,
        } => {
            let mut cfg = load(&common)?;
            let f = &mut cfg.fit;
            f.family = family.unwrap_or(f.family);
            f.p = p.unwrap_or(f.p);
            f.k = k.unwrap_or(f.k);
            f.mode = mode.unwrap_or(f.mode);
            commands::fit(&cfg)?;
        }
        Command::Evaluate {
            common,
            families,
            mode,
            in_sample,
            iterations,
        } => {
            let mut cfg = load(&common)?;
            let e = &mut cfg.evaluation;
            if let Some(f) = families {
                e.families = f;
            }
            if let Some(lens) = in_sample {
                e.in_sample_lens = Some(lens);
            }
            e.mode = mode.unwrap_or(e.mode);
            e.n_iterations = iterations.unwrap_or(e.n_iterations);
            commands::run_evaluate(&cfg)?;
        }
        Command::Selftest {
            config,
            seed,
            corrupt_gradient,
        } => {
            let mut st = SelftestConfig {
                corrupt_gradient,
                ..SelftestConfig::default()
            };
            if let Some(path) = config {
                st.seed = ExperimentConfig::load(&path)?.seed;
            }
            if let Some(s) = seed {
                st.seed = s;
            }
            if !commands::selftest(&st) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
