use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EpisodicEnv, StepResult};
use crate::state::State;
use crate::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub cart_position: f64,
    pub cart_velocity: f64,
    pub pole_angle: f64,
    pub angular_velocity: f64,
}

impl CartPoleState {
    pub fn new(x: f64, x_dot: f64, angle: f64, angle_dot: f64) -> Self {
        CartPoleState {
            cart_position: x,
            cart_velocity: x_dot,
            pole_angle: angle,
            angular_velocity: angle_dot,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [
            self.cart_position,
            self.cart_velocity,
            self.pole_angle,
            self.angular_velocity,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Neg for CartPoleState {
    type Output = CartPoleState;

    fn neg(self) -> CartPoleState {
        CartPoleState::new(
            -self.cart_position,
            -self.cart_velocity,
            -self.pole_angle,
            -self.angular_velocity,
        )
    }
}

impl State for CartPoleState {
    type Key = [u64; 4];

    fn key(&self) -> [u64; 4] {
        self.to_array().map(f64::to_bits)
    }

    fn features(&self) -> Vec<f64> {
        self.to_array().to_vec()
    }
}

/// Physical constants and episode limits. Defaults follow the classic
/// `CartPole-v0` environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub time_step: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub max_episode_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            time_step: 0.02,
            angle_limit: 12.0_f64.to_radians(),
            position_limit: 2.4,
            max_episode_steps: 200,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("time_step", self.time_step),
            ("angle_limit", self.angle_limit),
            ("position_limit", self.position_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("cartpole {name} must be positive")));
            }
        }
        if !(self.gravity >= 0.0) || !(self.force_magnitude >= 0.0) {
            return Err(Error::InvalidConfig(
                "cartpole gravity/force must be non-negative".into(),
            ));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidConfig("max_episode_steps must be positive".into()));
        }
        Ok(())
    }

    /// Explicit-Euler step of the frictionless cart-pole equations of motion.
    pub fn dynamics(&self, s: CartPoleState, action: usize) -> CartPoleState {
        let force = if action == RIGHT {
            self.force_magnitude
        } else {
            -self.force_magnitude
        };
        let total_mass = self.cart_mass + self.pole_mass;
        let pole_moment = self.pole_mass * self.pole_half_length;
        let (sin, cos) = s.pole_angle.sin_cos();

        let temp = (force + pole_moment * s.angular_velocity * s.angular_velocity * sin) / total_mass;
        let angle_acc = (self.gravity * sin - cos * temp)
            / (self.pole_half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_moment * angle_acc * cos / total_mass;

        let tau = self.time_step;
        CartPoleState {
            cart_position: s.cart_position + tau * s.cart_velocity,
            cart_velocity: s.cart_velocity + tau * x_acc,
            pole_angle: s.pole_angle + tau * s.angular_velocity,
            angular_velocity: s.angular_velocity + tau * angle_acc,
        }
    }

    pub fn out_of_bounds(&self, s: &CartPoleState) -> bool {
        s.cart_position.abs() > self.position_limit || s.pole_angle.abs() > self.angle_limit
    }
}

/// Start state: each coordinate uniform on `[−0.05, 0.05]`.
pub fn cartpole_reset<R: Rng + ?Sized>(rng: &mut R) -> CartPoleState {
    let mut draw = || rng.gen_range(-0.05..=0.05);
    CartPoleState::new(draw(), draw(), draw(), draw())
}

/// A cart-pole episode in progress.
#[derive(Clone, Debug)]
pub struct CartPole {
    params: CartPoleParams,
    state: CartPoleState,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        params.validate()?;
        Ok(CartPole {
            params,
            state: CartPoleState::default(),
            steps: 0,
            done: true,
        })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Starts an episode from a chosen state instead of a random one.
    pub fn reset_to(&mut self, state: CartPoleState) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }
}

impl EpisodicEnv for CartPole {
    type State = CartPoleState;

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> CartPoleState {
        let s = cartpole_reset(rng);
        self.reset_to(s);
        s
    }

    /// Reward is +1 every step. The episode ends once the pole leans past
    /// the angle limit, the cart leaves the track, or the step limit is hit.
    fn step(&mut self, action: usize) -> Result<StepResult<CartPoleState>> {
        if self.done {
            return Err(Error::StepAfterTerminal);
        }
        let next = self.params.dynamics(self.state, action);
        self.steps += 1;
        let terminal = self.params.out_of_bounds(&next) || self.steps >= self.params.max_episode_steps;
        self.state = next;
        self.done = terminal;
        Ok(StepResult {
            next_state: next,
            reward: 1.0,
            terminal,
        })
    }
}
