use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ivstream::presets::{cell_names, PRESETS};
use ivstream_cli::commands::{first_failure, threads_from_env, THREADS_ENV};
use ivstream_cli::{cmd_check, cmd_compare, cmd_run, CheckOptions, Overrides, Source, Written};

/// Streaming instrumental-variable regression experiments.
#[derive(Debug, Parser)]
#[command(name = "ivstream", version, after_help = format!("Set {THREADS_ENV} to cap worker threads."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configured experiment or a preset.
    Run(RunArgs),
    /// Run several algorithms on paired sample streams.
    Compare(RunArgs),
    /// Gradient, inverse-identity and determinism self checks.
    Check {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, hide = true)]
        corrupt_u0: bool,
    },
    /// List presets and their cells.
    Presets,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Restrict a preset to one grid cell.
    #[arg(long, requires = "preset")]
    cell: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Debug, Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    iters: Option<u64>,
}

impl OverrideArgs {
    fn get(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            trials: self.trials.map(|t| t as usize),
            iters: self.iters,
        }
    }
}

impl RunArgs {
    fn source(&self) -> Source {
        match (&self.config, &self.preset) {
            (Some(p), _) => Source::Config(p.clone()),
            (None, Some(name)) => Source::Preset {
                name: name.clone(),
                cell: self.cell.clone(),
            },
            (None, None) => unreachable!("clap requires a config or a preset"),
        }
    }
}

fn report(written: &[Written]) {
    for w in written {
        println!("wrote {} and {}", w.csv.display(), w.manifest.display());
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let threads = threads_from_env()?;
            report(&cmd_run(&args.source(), &args.out, &args.overrides.get(), threads)?);
        }
        Command::Compare(args) => {
            let threads = threads_from_env()?;
            report(&cmd_compare(&args.source(), &args.out, &args.overrides.get(), threads)?);
        }
        Command::Check {
            config,
            overrides,
            corrupt_u0,
        } => {
            let outcomes = cmd_check(config.as_deref(), &overrides.get(), CheckOptions { corrupt_u0 })
                .context("check could not run")?;
            for o in &outcomes {
                println!("{o}");
            }
            if let Some(f) = first_failure(&outcomes) {
                bail!(
                    "check `{}` failed: measured {:e} exceeds tolerance {:e}",
                    f.name,
                    f.measured,
                    f.tolerance
                );
            }
        }
        Command::Presets => {
            for p in PRESETS {
                for c in cell_names(p)? {
                    println!("{p} {c}");
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
