use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use fgdqn::envs::CartPole;
use fgdqn::exec::Execution;
use fgdqn::mdp::{policy_iteration, DeterministicPolicy};
use fgdqn::metrics::{moving_average, running_average, RunMetrics};
use fgdqn::trainers::{cartpole_encoding, train_off_policy, train_on_policy, Algorithm, Learner};

use crate::config::{Environment, RunConfig};

pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub episodic: bool,
    pub seed: u64,
    pub learner: Learner,
    pub metrics: RunMetrics,
}

/// Final values of one run, as written to `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub diverged_at: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_running_bellman_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_true_bellman_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_hamming_distance: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_reward_ma100: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_reward_ma100: Option<f64>,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary {
        let m = &self.metrics;
        let mut s = RunSummary {
            algorithm: self.algorithm,
            seed: self.seed,
            diverged_at: m.diverged_at,
            iterations: None,
            final_running_bellman_error: None,
            final_true_bellman_error: None,
            final_hamming_distance: None,
            episodes: None,
            final_reward_ma100: None,
            best_reward_ma100: None,
        };
        if self.episodic {
            let ma = moving_average(&m.episode_reward, 100);
            s.episodes = Some(m.episodes());
            s.final_reward_ma100 = ma.last().copied();
            s.best_reward_ma100 = ma.iter().copied().reduce(f64::max);
        } else {
            s.iterations = Some(m.iterations());
            s.final_running_bellman_error = running_average(&m.dqn_bellman_error).last().copied();
            s.final_true_bellman_error = m.true_bellman_error.last().copied();
            s.final_hamming_distance = m.hamming_distance.last().copied();
        }
        s
    }
}

/// The optimal policy of the configured forest, if the environment is one.
pub fn reference_policy(config: &RunConfig) -> Result<Option<DeterministicPolicy>> {
    if config.is_cartpole() {
        return Ok(None);
    }
    Ok(Some(policy_iteration(&config.mdp()?)?.0))
}

pub fn run_one(config: &RunConfig, algorithm: Algorithm, seed: u64) -> Result<RunOutcome> {
    let trainer = config.trainer(algorithm, seed);
    let hash = config.hash();
    let (learner, mut metrics) = match &config.environment {
        Environment::Forest { .. } => {
            let mdp = config.mdp()?;
            let reference = reference_policy(config)?;
            train_off_policy(&mdp, &trainer, &config.network, config.budget, reference.as_ref())?
        }
        Environment::Cartpole { params } => {
            let mut env = CartPole::new(*params)?;
            train_on_policy(
                &mut env,
                cartpole_encoding(),
                &trainer,
                &config.network,
                config.budget as usize,
            )?
        }
    };
    metrics.config_hash = hash;
    Ok(RunOutcome {
        algorithm,
        episodic: config.is_cartpole(),
        seed,
        learner,
        metrics,
    })
}

/// Every (algorithm, seed) pair of the config, in algorithm-major order.
/// With `threads` set, runs are spread over a pool of that many workers.
pub fn run_all(config: &RunConfig, threads: Option<usize>) -> Result<Vec<RunOutcome>> {
    let jobs: Vec<(Algorithm, u64)> = config
        .algorithms
        .iter()
        .flat_map(|&a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let go = |exec: Execution| {
        exec.map(&jobs, |&(a, s)| run_one(config, a, s))
            .into_iter()
            .collect::<Result<Vec<_>>>()
    };
    match threads {
        #[cfg(feature = "parallel")]
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| go(Execution::Parallel))
        }
        _ => go(Execution::Sequential),
    }
}

pub fn run_dir(out: &Path, algorithm: Algorithm) -> PathBuf {
    out.join(algorithm.name())
}

pub fn csv_path(out: &Path, algorithm: Algorithm, seed: u64) -> PathBuf {
    run_dir(out, algorithm).join(format!("run_{seed}.csv"))
}

pub fn checkpoint_path(out: &Path, algorithm: Algorithm, seed: u64) -> PathBuf {
    run_dir(out, algorithm).join(format!("checkpoint_{seed}.json"))
}

/// Writes the metric CSV and the learned parameters of one run.
pub fn write_outcome(out: &Path, config: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(run_dir(out, outcome.algorithm))?;
    let path = csv_path(out, outcome.algorithm, outcome.seed);
    let file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    if config.is_cartpole() {
        outcome.metrics.write_episode_csv(file)?;
    } else {
        outcome.metrics.write_iteration_csv(file)?;
    }
    let ckpt = BufWriter::new(File::create(checkpoint_path(out, outcome.algorithm, outcome.seed))?);
    serde_json::to_writer(ckpt, &outcome.learner)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: String,
    config: &'a RunConfig,
    runs: Vec<RunSummary>,
}

pub fn write_summary(out: &Path, config: &RunConfig, outcomes: &[RunOutcome]) -> Result<()> {
    fs::create_dir_all(out)?;
    let summary = Summary {
        config_hash: config.hash(),
        config,
        runs: outcomes.iter().map(RunOutcome::summary).collect(),
    };
    let file = BufWriter::new(File::create(out.join("summary.json"))?);
    serde_json::to_writer_pretty(file, &summary)?;
    Ok(())
}
