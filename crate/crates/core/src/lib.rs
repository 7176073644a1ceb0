//! Full-gradient DQN and friends.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs and the exact dynamic-programming oracles
//!   (value iteration, Q-value iteration, policy iteration, policy
//!   evaluation, stationary laws).
//! - [`envs`]: the forest-management MDP, the cart-pole simulator and the
//!   round-robin off-policy sampler.
//! - [`qnet`]: a small multilayer perceptron with exact reverse-mode
//!   parameter gradients, plus the [`qnet::QModel`] wrapper that maps
//!   `(state, action)` pairs onto network inputs.
//! - [`replay`]: a ring-buffer replay memory with a `(state, action)` index
//!   for conditional averaging.
//! - [`trainers`]: tabular Q-learning, DQN, Double DQN and FG-DQN updates,
//!   and the off-policy / on-policy training loops.
//! - [`metrics`]: Bellman errors, Hamming distances, reward curves and
//!   multi-seed aggregation.
//! - [`gradcheck`]: finite-difference checks of the network gradients and
//!   of the full-gradient update direction.
//! - [`exec`]: data-parallel batch evaluation with a sequential fallback.

pub mod envs;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod mdp;
pub mod metrics;
pub mod qnet;
pub mod replay;
pub mod state;
pub mod trainers;

pub use error::{Error, Result};
