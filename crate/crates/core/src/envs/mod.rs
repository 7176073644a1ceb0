//! Benchmark environments: the forest-management MDP, cart-pole, and the
//! round-robin sampler used for off-policy training.

mod cartpole;
mod forest;
mod sampler;

pub use cartpole::{cartpole_reset, CartPole, CartPoleParams, CartPoleState, LEFT, RIGHT};
pub use forest::{forest_build_mdp, ForestParams, CUT, WAIT};
pub use sampler::RoundRobinSampler;

use rand::RngCore;

use crate::state::State;
use crate::Result;

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
}

/// An episodic environment driven by the on-policy trainer.
pub trait EpisodicEnv {
    type State: State;

    fn num_actions(&self) -> usize;

    /// Starts a new episode and returns its first observation.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Self::State;

    /// Advances one step. Stepping a finished episode is an error.
    fn step(&mut self, action: usize) -> Result<StepResult<Self::State>>;
}
