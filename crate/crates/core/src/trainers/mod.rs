//! Learning rules and training loops.

mod off_policy;
mod on_policy;
mod schedule;
mod tabular;
mod updates;

pub use off_policy::{forest_encoding, train_off_policy};
pub use on_policy::{cartpole_encoding, train_on_policy};
pub use schedule::StepSizeSchedule;
pub use tabular::q_learning_step;
pub use updates::{compute_td_terms, dqn_step, epsilon_greedy, fgdqn_step, target_sync, TdMode, TdTerms, UpdateStats};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::mdp::QTable;
use crate::qnet::{Activation, Encoding, InitScheme, QModel, QNetwork};
use crate::replay::DEFAULT_CAPACITY;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TabularQ,
    Dqn,
    DoubleDqn,
    Fgdqn,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::TabularQ => "tabular_q",
            Algorithm::Dqn => "dqn",
            Algorithm::DoubleDqn => "double_dqn",
            Algorithm::Fgdqn => "fgdqn",
        }
    }

    fn uses_target_net(self) -> bool {
        matches!(self, Algorithm::Dqn | Algorithm::DoubleDqn)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSizeSchedule,
    pub discount: f64,
    pub batch_size: usize,
    /// Target refresh period, counted in iterations off-policy and in
    /// episodes on-policy.
    pub target_sync_period: u64,
    #[serde(default)]
    pub epsilon: f64,
    /// Amplitude of the uniform extraneous noise in FG-DQN.
    #[serde(default)]
    pub noise_amplitude: f64,
    /// Average FG-DQN targets over stored transitions with the same
    /// `(state, action)`.
    #[serde(default)]
    pub conditional_replay: bool,
    /// Apply `batch_size` single-sample updates instead of one averaged one.
    #[serde(default)]
    pub sequential_inner_updates: bool,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.noise_amplitude >= 0.0) {
            return bad("noise_amplitude must be non-negative");
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be positive");
        }
        Ok(())
    }
}

/// Hidden layers and activation of the Q-network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_bound: Option<f64>,
}

impl NetworkSpec {
    pub fn new(hidden_dims: Vec<usize>, activation: Activation) -> Self {
        NetworkSpec {
            hidden_dims,
            activation,
            output_bound: None,
        }
    }

    pub fn build<R: rand::Rng + ?Sized>(&self, encoding: Encoding, rng: &mut R) -> Result<QModel> {
        let mut topology = encoding.topology(self.hidden_dims.clone(), self.activation);
        topology.output_bound = self.output_bound;
        QModel::new(encoding, QNetwork::init(topology, rng, InitScheme::UniformFanIn)?)
    }
}

/// What a training run learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learner {
    Tabular { table: QTable },
    Network { model: QModel },
}

impl Learner {
    pub fn model(&self) -> Option<&QModel> {
        match self {
            Learner::Network { model } => Some(model),
            Learner::Tabular { .. } => None,
        }
    }

    pub fn table(&self) -> Option<&QTable> {
        match self {
            Learner::Tabular { table } => Some(table),
            Learner::Network { .. } => None,
        }
    }
}

/// Independent random streams of one run.
pub(crate) struct RunRngs {
    pub init: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        RunRngs {
            init: stream(0),
            env: stream(1),
            replay: stream(2),
            noise: stream(3),
        }
    }
}
