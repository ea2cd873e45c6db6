use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod error;
mod manifest;
mod stages;

use config::{EpisodeTarget, Overrides, RunConfig};
use error::CliError;
use manifest::Stage;
use stages::{GrpoInit, Run};

/// Calibrate, train and evaluate step-level precision routers.
#[derive(Debug, Parser)]
#[command(name = "mixroute", version)]
struct Cli {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rollout threads for collection and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Tuning {
    /// Episode count for this command.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda_high: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probe the world and check that divergences separate into two modes.
    Calibrate(Tuning),
    /// Roll out divergence-recording episodes and write the supervision records.
    Collect(Tuning),
    /// Train the router on labeled records.
    TrainKlst(Tuning),
    /// Refine a router with group-relative policy optimization.
    TrainGrpo {
        #[command(flatten)]
        tuning: Tuning,
        /// Starting checkpoint; defaults to the train-klst output.
        #[arg(long, conflicts_with = "fresh")]
        init: Option<PathBuf>,
        /// Start from randomly initialized weights.
        #[arg(long)]
        fresh: bool,
    },
    /// Evaluate the configured methods on held-out episodes.
    Eval {
        #[command(flatten)]
        tuning: Tuning,
        /// Skip router specs so no checkpoint is needed.
        #[arg(long)]
        baselines_only: bool,
    },
    /// Summarize the evaluation into export/summary.json.
    Export,
    /// Run every stage in order.
    Pipeline(Tuning),
    /// Rerun the stage described by a manifest.
    Replay { manifest: PathBuf },
    /// Print the resolved config as TOML.
    ShowConfig(Tuning),
}

fn resolve(cli: &Cli, tuning: &Tuning, target: EpisodeTarget) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        tau: tuning.tau,
        lambda_high: tuning.lambda_high,
        beta: tuning.beta,
        group_size: tuning.group_size,
    };
    cfg.apply(&overrides, tuning.episodes.map(|n| (n, target)));
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config(vec!["--workers must be at least 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let none = Tuning::default();
    let (stage, tuning, target) = match &cli.command {
        Command::Replay { manifest } => return stages::replay(manifest),
        Command::ShowConfig(t) => {
            let cfg = resolve(&cli, t, EpisodeTarget::Collection)?;
            print!("{}", cfg.to_toml());
            return cfg.validate();
        }
        Command::Pipeline(t) => {
            return Run::new(resolve(&cli, t, EpisodeTarget::Collection)?)?.pipeline();
        }
        Command::Calibrate(t) => (Stage::Calibrate, t, EpisodeTarget::Collection),
        Command::Collect(t) => (Stage::Collect, t, EpisodeTarget::Collection),
        Command::TrainKlst(t) => (Stage::TrainKlst, t, EpisodeTarget::Collection),
        Command::TrainGrpo { tuning, .. } => (Stage::TrainGrpo, tuning, EpisodeTarget::GrpoBudget),
        Command::Eval { tuning, .. } => (Stage::Eval, tuning, EpisodeTarget::Evaluation),
        Command::Export => (Stage::Export, &none, EpisodeTarget::Evaluation),
    };
    let mut cfg = resolve(&cli, tuning, target)?;
    if let Command::Eval { baselines_only: true, .. } = cli.command {
        stages::baselines_only(&mut cfg);
    }
    let init = match &cli.command {
        Command::TrainGrpo { fresh: true, .. } => GrpoInit::Fresh,
        Command::TrainGrpo { init: Some(p), .. } => GrpoInit::Checkpoint(p.clone()),
        _ => GrpoInit::Klst,
    };
    Run::new(cfg)?.run_stage(stage, &init)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn episodes_target_follows_command() {
        let cli = Cli::parse_from(["mixroute", "--seed", "4", "eval", "--episodes", "30"]);
        let Command::Eval { tuning, .. } = &cli.command else { panic!() };
        let cfg = resolve(&cli, tuning, EpisodeTarget::Evaluation).unwrap();
        assert_eq!((cfg.eval.episodes, cfg.klst.episodes, cfg.seed), (30, 200, 4));
    }
}
