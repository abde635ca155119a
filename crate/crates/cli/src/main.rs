use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedro_cli::audit::run_audit;
use fedro_cli::{build_report, parse_config, run_cells, write_report, CliError, ExperimentConfig, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "fedro", version, about = "Robust federated learning testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; falls back to $FEDRO_OUT, then the config's output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed (and the sweep seed axis).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical robustness coefficients on random clouds.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// A single training run.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Training runs over a grid of f and f̂.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measured results against analytic bounds.
    Report {
        /// Results directory of an earlier run.
        #[arg(long, conflicts_with = "config")]
        results: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path, expected: ExperimentKind, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = parse_config(&text).map_err(CliError::from)?;
    if config.kind != expected {
        return Err(CliError::from(fedro_cli::ConfigError::single(format!(
            "config kind is \"{}\" but the command is \"{}\"",
            config.kind.name(),
            expected.name()
        )))
        .into());
    }
    if let Some(seed) = seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("FEDRO_OUT").map(PathBuf::from))
        .or_else(|| config.and_then(|c| c.output.as_ref()).map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("fedro-out"))
}

fn try_main(cli: &Cli) -> anyhow::Result<()> {
    let options = |config: &ExperimentConfig| RunOptions {
        out_dir: out_dir(cli, Some(config)),
        jobs: cli.jobs.max(1),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Audit { config } => {
            let config = load(config, ExperimentKind::Audit, cli.seed)?;
            let opts = options(&config);
            let summary = run_audit(&config, &opts)?;
            if !cli.quiet {
                eprintln!("{} rows written to {}", summary.rows, opts.out_dir.display());
            }
        }
        Command::Simulate { config } | Command::Sweep { config } => {
            let kind = if matches!(cli.command, Command::Simulate { .. }) {
                ExperimentKind::Simulate
            } else {
                ExperimentKind::Sweep
            };
            let config = load(config, kind, cli.seed)?;
            let summary = run_cells(&config, &options(&config))?;
            if summary.failed > 0 {
                return Err(CliError::PartialFailure {
                    failed: summary.failed,
                    total: summary.total,
                }
                .into());
            }
        }
        Command::Report { results, config } => {
            let (results, config) = match (results, config) {
                (Some(dir), _) => (dir.clone(), None),
                (None, Some(path)) => {
                    let config = load(path, ExperimentKind::Report, None)?;
                    let dir = config.report.as_ref().map(|r| r.results.clone()).unwrap_or_default();
                    (dir, Some(config))
                }
                (None, None) => anyhow::bail!("report needs --results or --config"),
            };
            let report = build_report(&results)?;
            let out = if cli.out.is_some() || std::env::var_os("FEDRO_OUT").is_some() || config.as_ref().is_some_and(|c| c.output.is_some()) {
                out_dir(cli, config.as_ref())
            } else {
                results
            };
            write_report(&report, &out)?;
            if !cli.quiet {
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match try_main(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(2, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
