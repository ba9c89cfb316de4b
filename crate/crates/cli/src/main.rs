use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mpf_cli::{run_phase, run_pipeline, CliError, Experiment, Phase};

#[derive(Parser)]
#[command(name = "mpf", version, about = "Multitask policy foundation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for candidate training.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// First phase `pipeline` runs.
    #[arg(long, global = true)]
    phase: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train K candidate foundation policies.
    Acquire,
    /// Score candidates with the selection index and pick one.
    Select,
    /// Search the latent of the selected policy on held-out contexts.
    Generate,
    /// Bootstrap top-one regret of index-based against random selection.
    Regret,
    /// Render SVG plots; extra CSV files are drawn as line plots.
    Plot { csv: Vec<PathBuf> },
    /// Run every phase in order.
    Pipeline,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.ok_or_else(|| CliError::Config {
        path: PathBuf::from("<none>"),
        msg: "--config is required".into(),
    })?;
    let exp = Experiment::load(&config, cli.out, cli.seed)?;
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Acquire => run_phase(&exp, Phase::Acquire, jobs, &[]),
        Command::Select => run_phase(&exp, Phase::Select, jobs, &[]),
        Command::Generate => run_phase(&exp, Phase::Generate, jobs, &[]),
        Command::Regret => run_phase(&exp, Phase::Regret, jobs, &[]),
        Command::Plot { csv } => run_phase(&exp, Phase::Plot, jobs, &csv),
        Command::Pipeline => {
            let from = cli
                .phase
                .as_deref()
                .map(Phase::parse)
                .transpose()?
                .unwrap_or(Phase::Acquire);
            run_pipeline(&exp, from, jobs)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPF_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
