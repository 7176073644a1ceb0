use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fgdqn_cli::commands;
use fgdqn_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "fgdqn", version, about = "Full-gradient DQN experiments")]
struct Cli {
    /// JSON run configuration. Defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Forest)]
    preset: Preset,
    /// Override a configuration field, e.g. `--set discount=0.95`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing the configured ones.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Number of runs executed concurrently.
    #[arg(long, global = true, value_name = "N")]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Forest,
    Cartpole,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as JSON.
    Config,
    /// Exact optimal policy and values of the forest MDP.
    Solve,
    /// Train every configured algorithm on every seed.
    Train,
    /// Train, then aggregate across seeds into CSV tables and SVG plots.
    Compare,
    /// Finite-difference checks of the network and FG-DQN gradients.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        probes: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        full_tol: f64,
    },
    /// Evaluate the greedy policy of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Greedy rollouts on cartpole.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let base = match (&cli.config, cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Preset::Forest) => RunConfig::forest(),
        (None, Preset::Cartpole) => RunConfig::cartpole(),
    };
    let mut config = base.with_overrides(&cli.overrides)?;
    if let Some(seeds) = &cli.seeds {
        config.seeds = seeds.clone();
        config.validate()?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load(&cli)?;
    let mut stdout = io::stdout().lock();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let code = match cli.command {
        Command::Config => {
            serde_json::to_writer_pretty(&mut stdout, &config)?;
            writeln!(stdout)?;
            ExitCode::SUCCESS
        }
        Command::Solve => {
            commands::solve(&config, cli.out.as_deref(), &mut stdout)?;
            ExitCode::SUCCESS
        }
        Command::Train | Command::Compare => {
            let outcomes = if matches!(cli.command, Command::Train) {
                commands::train(&config, &out, cli.parallel, &mut stdout)?
            } else {
                commands::compare(&config, &out, cli.parallel, &mut stdout)?
            };
            let diverged = commands::diverged(&outcomes);
            for (alg, seed, n) in &diverged {
                eprintln!("{alg} seed {seed} diverged at iteration {n}");
            }
            if diverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Gradcheck { probes, tol, full_tol } => {
            if probes == 0 {
                bail!("--probes must be positive");
            }
            let summary = commands::gradcheck(&config, probes, tol, full_tol, &mut stdout)?;
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Eval { checkpoint, episodes } => {
            commands::eval(&config, &checkpoint, episodes, &mut stdout)?;
            ExitCode::SUCCESS
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
