use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use fgdqn::envs::{forest_build_mdp, CartPoleParams, ForestParams};
use fgdqn::exec::Execution;
use fgdqn::mdp::TabularMdp;
use fgdqn::qnet::Activation;
use fgdqn::replay::DEFAULT_CAPACITY;
use fgdqn::trainers::{Algorithm, NetworkSpec, StepSizeSchedule, TrainerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Environment {
    Forest {
        #[serde(default = "default_forest_states")]
        num_states: usize,
        fire_prob: f64,
    },
    Cartpole {
        #[serde(default)]
        params: CartPoleParams,
    },
}

fn default_forest_states() -> usize {
    10
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: Environment,
    pub discount: f64,
    pub algorithms: Vec<Algorithm>,
    pub schedule: StepSizeSchedule,
    pub batch_size: usize,
    pub target_sync_period: u64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub conditional_replay: bool,
    #[serde(default)]
    pub sequential_inner_updates: bool,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default)]
    pub execution: Execution,
    pub network: NetworkSpec,
    /// Iterations on forest, episodes on cartpole.
    pub budget: u64,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    /// Forest management, γ = 0.8, p = 0.05.
    pub fn forest() -> Self {
        RunConfig {
            environment: Environment::Forest {
                num_states: 10,
                fire_prob: 0.05,
            },
            discount: 0.8,
            algorithms: vec![Algorithm::Dqn, Algorithm::Fgdqn],
            schedule: StepSizeSchedule::Polynomial {
                base: 1e-2,
                exponent: 0.6,
                offset: 1e4,
            },
            batch_size: 25,
            target_sync_period: 100,
            epsilon: 0.0,
            noise_amplitude: 0.0,
            conditional_replay: true,
            sequential_inner_updates: false,
            replay_capacity: DEFAULT_CAPACITY,
            execution: Execution::Sequential,
            network: NetworkSpec::new(vec![200], Activation::Relu),
            budget: 10_000,
            seeds: (0..10).collect(),
        }
    }

    pub fn cartpole() -> Self {
        RunConfig {
            environment: Environment::Cartpole {
                params: CartPoleParams::default(),
            },
            discount: 0.99,
            algorithms: vec![Algorithm::Dqn, Algorithm::Fgdqn],
            schedule: StepSizeSchedule::Constant { base: 1e-2 },
            batch_size: 128,
            target_sync_period: 10,
            epsilon: 0.1,
            noise_amplitude: 0.0,
            conditional_replay: false,
            sequential_inner_updates: false,
            replay_capacity: DEFAULT_CAPACITY,
            execution: Execution::Sequential,
            network: NetworkSpec::new(vec![16, 32, 32], Activation::Relu),
            budget: 1500,
            seeds: (0..5).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: RunConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key=value` overrides, where `key` is a dotted path and
    /// `value` is JSON (bare words are taken as strings).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        Self::from_value(value).with_context(|| format!("applying overrides {overrides:?}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            bail!("no algorithms selected");
        }
        if self.seeds.is_empty() {
            bail!("no seeds selected");
        }
        for &algorithm in &self.algorithms {
            if algorithm == Algorithm::TabularQ && self.is_cartpole() {
                bail!("tabular_q needs a finite environment");
            }
            self.trainer(algorithm, 0).validate()?;
        }
        if let Environment::Cartpole { params } = &self.environment {
            params.validate()?;
        } else {
            self.mdp()?;
        }
        Ok(())
    }

    pub fn is_cartpole(&self) -> bool {
        matches!(self.environment, Environment::Cartpole { .. })
    }

    pub fn forest_params(&self) -> Option<ForestParams> {
        match self.environment {
            Environment::Forest { num_states, fire_prob } => Some(ForestParams {
                num_states,
                fire_prob,
                discount: self.discount,
            }),
            Environment::Cartpole { .. } => None,
        }
    }

    pub fn mdp(&self) -> Result<TabularMdp> {
        let params = self
            .forest_params()
            .ok_or_else(|| anyhow!("cartpole has no tabular model"))?;
        Ok(forest_build_mdp(&params)?)
    }

    pub fn trainer(&self, algorithm: Algorithm, seed: u64) -> TrainerConfig {
        TrainerConfig {
            algorithm,
            schedule: self.schedule,
            discount: self.discount,
            batch_size: self.batch_size,
            target_sync_period: self.target_sync_period,
            epsilon: self.epsilon,
            noise_amplitude: self.noise_amplitude,
            conditional_replay: self.conditional_replay,
            sequential_inner_updates: self.sequential_inner_updates,
            replay_capacity: self.replay_capacity,
            seed,
            execution: self.execution,
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) if last => {
                map.insert(part.to_string(), new);
                return Ok(());
            }
            Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| anyhow!("`{part}` in `{key}` is not an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| anyhow!("index {idx} out of range ({len}) in `{key}`"))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => bail!("`{key}` does not address an object field"),
        };
    }
    unreachable!("loop returns on the last path element")
}
