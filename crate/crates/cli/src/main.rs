use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairlens_cli::config::ExperimentConfig;
use fairlens_cli::error::{CliError, CliResult};
use fairlens_cli::{audit_cmd, generate, plot, sweep, table1};

#[derive(Parser)]
#[command(name = "fairlens", version, about = "Train fair classifiers and audit them for disparate treatment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its spec.
    Generate(Common),
    /// Train every method, setting and seed, then write tradeoff.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Reuse an output directory written under a different config.
        #[arg(long)]
        resume: bool,
    },
    /// Best accuracy per method under a disparity reduction.
    Table1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        reduction: f64,
    },
    /// Probe, reconstruct and counterfactual reports from sweep artifacts.
    Audit(Common),
    /// Rewrite tradeoff.csv and add a summary over seeds.
    TradeoffPlotData(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = ExperimentConfig::load(&c.config)?;
            let (csv, spec) = generate::generate(&cfg)?;
            println!("wrote {} and {}", csv.display(), spec.display());
        }
        Command::Sweep { common, resume } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let summary = sweep::sweep(&cfg, common.jobs, resume)?;
            println!(
                "{} run(s) executed, {} reused; wrote {}",
                summary.executed.len(),
                summary.reused,
                cfg.output_dir.join(sweep::TRADEOFF_CSV).display()
            );
            if summary.failures > 0 {
                return Err(CliError::RunFailures(summary.failures));
            }
        }
        Command::Table1 { common, reduction } => {
            table1::check_reduction(reduction)?;
            let cfg = ExperimentConfig::load(&common.config)?;
            let path = table1::write_table1(&cfg, reduction)?;
            print!("{}", std::fs::read_to_string(&path)?);
        }
        Command::Audit(c) => {
            let cfg = ExperimentConfig::load(&c.config)?;
            let summary = audit_cmd::audit(&cfg, c.jobs)?;
            println!(
                "wrote {} audit report(s) and {} embedding file(s) under {}",
                summary.reports.len(),
                summary.embeddings.len(),
                cfg.output_dir.display()
            );
        }
        Command::TradeoffPlotData(c) => {
            let cfg = ExperimentConfig::load(&c.config)?;
            let (curve, summary) = plot::tradeoff_plot_data(&cfg)?;
            println!("wrote {} and {}", curve.display(), summary.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairlens: {e}");
            e.exit_code()
        }
    }
}
