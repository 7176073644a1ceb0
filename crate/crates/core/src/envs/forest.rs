use serde::{Deserialize, Serialize};

use crate::mdp::TabularMdp;
use crate::{Error, Result};

pub const WAIT: usize = 0;
pub const CUT: usize = 1;

/// Forest-management problem: ages `0..num_states`, fire probability `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(default = "default_num_states")]
    pub num_states: usize,
    pub fire_prob: f64,
    pub discount: f64,
}

fn default_num_states() -> usize {
    10
}

impl ForestParams {
    pub fn new(fire_prob: f64, discount: f64) -> Self {
        ForestParams {
            num_states: default_num_states(),
            fire_prob,
            discount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::InvalidConfig("forest needs at least 2 states".into()));
        }
        if !(0.0..=1.0).contains(&self.fire_prob) {
            return Err(Error::InvalidConfig(format!(
                "fire probability {} outside [0, 1]",
                self.fire_prob
            )));
        }
        Ok(())
    }
}

/// Builds the forest MDP.
///
/// `Wait` ages the forest by one (capped at the oldest age) unless a fire
/// resets it to age 0, and pays nothing. `Cut` always resets to age 0 and
/// pays the current age.
pub fn forest_build_mdp(params: &ForestParams) -> Result<TabularMdp> {
    params.validate()?;
    let n = params.num_states;
    let p = params.fire_prob;
    let mut transition = vec![vec![vec![0.0; n]; 2]; n];
    let mut reward = vec![vec![0.0; 2]; n];
    for x in 0..n {
        let older = (x + 1).min(n - 1);
        transition[x][WAIT][older] += 1.0 - p;
        transition[x][WAIT][0] += p;
        transition[x][CUT][0] = 1.0;
        reward[x][CUT] = x as f64;
    }
    TabularMdp::new(n, 2, transition, reward, params.discount)
}
