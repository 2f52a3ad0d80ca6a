use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fairrisk::commands;
use fairrisk::{CliError, Overrides, RunConfig};
use fairrisk_core::fairness::Variant;

#[derive(Debug, Parser)]
#[command(name = "fairrisk", version, about = "Marginally fair risk-based decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Risk measure: `ev` or `es:<level>`.
    #[arg(long, global = true)]
    rho: Option<String>,

    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Marginal,
    Cascade,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic and Monte Carlo series of the gaussian-linear study.
    Simulate,
    /// Synthetic portfolio CSV and its generator coefficients.
    Generate {
        /// Number of policies (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit, decide and summarize on a portfolio CSV.
    Audit {
        /// Portfolio CSV; a synthetic portfolio is generated when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Sensitivities of the gaussian-linear model from all three sources.
    Sensitivity,
    /// CSV tables from an `audit-*.json` report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let mut overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        rho: cli.rho,
        variant: cli.variant.map(|v| match v {
            VariantArg::Marginal => Variant::Marginal,
            VariantArg::Cascade => Variant::Cascade,
        }),
        input: None,
    };
    match cli.command {
        Command::Simulate => {
            cfg.apply(&overrides)?;
            commands::run_simulate(&cfg)
        }
        Command::Generate { n } => {
            if let Some(n) = n {
                cfg.generate.n = n;
            }
            cfg.apply(&overrides)?;
            commands::run_generate(&cfg)
        }
        Command::Audit { input } => {
            overrides.input = input;
            cfg.apply(&overrides)?;
            commands::run_audit(&cfg)
        }
        Command::Sensitivity => {
            cfg.apply(&overrides)?;
            commands::run_sensitivity(&cfg)
        }
        Command::Report { input } => {
            cfg.apply(&overrides)?;
            commands::run_report(&input, &cfg.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
