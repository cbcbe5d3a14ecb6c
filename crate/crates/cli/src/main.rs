use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use liqsim::commands::{self, VerificationFailed};
use liqsim::config::ScenarioConfig;
use liqsim::scenarios;

#[derive(Parser, Debug)]
#[command(name = "liqsim", version, about = "Liquidation and oracle-manipulation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal liquidation of the configured position.
    Liquidate { config: PathBuf },
    /// Sandwich attack: fixed size from [attack].delta, optimized otherwise.
    Attack { config: PathBuf },
    /// CSV over the [sweep] axis.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest pool fee that removes every profitable attack.
    FeeThreshold { config: PathBuf },
    /// Data behind one of the built-in figures.
    Reproduce {
        example: Example,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the column legend to stderr.
        #[arg(long)]
        legend: bool,
    },
    /// Run the oracle suites on seeded random instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        grid_n: usize,
        #[arg(long, default_value_t = 100)]
        splits: usize,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Example {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
}

fn emit(text: &str, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    liqsim::init_threads()?;
    match cli.command {
        Command::Liquidate { config } => emit(&commands::liquidate(&ScenarioConfig::load(&config)?)?, None),
        Command::Attack { config } => emit(&commands::attack(&ScenarioConfig::load(&config)?)?, None),
        Command::Sweep { config, out } => {
            let table = scenarios::sweep(&ScenarioConfig::load(&config)?)?;
            emit(&table.to_csv_string()?, out.as_ref())
        }
        Command::FeeThreshold { config } => emit(&commands::fee_threshold(&ScenarioConfig::load(&config)?)?, None),
        Command::Reproduce { example, out, legend } => {
            let id = format!("{example:?}").to_lowercase();
            let table = scenarios::run_example(&id)?;
            if legend {
                eprint!("{}", table.legend());
            }
            emit(&table.to_csv_string()?, out.as_ref())
        }
        Command::Verify {
            instances,
            seed,
            grid_n,
            splits,
            report,
        } => {
            let (rep, summary) = commands::verify(instances, seed, grid_n, splits)?;
            emit(&commands::report_lines(&rep)?, report.as_ref())?;
            eprint!("{summary}");
            let failed = rep.failures().count();
            if failed > 0 {
                anyhow::bail!(VerificationFailed {
                    failed,
                    total: rep.records.len(),
                });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
