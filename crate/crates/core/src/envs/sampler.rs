use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::mdp::TabularMdp;

/// Off-policy sampler that visits every `(x, u)` pair in lexicographic order
/// and draws `x′ ~ p(·|x,u)` for each.
#[derive(Clone, Debug)]
pub struct RoundRobinSampler {
    num_actions: usize,
    rows: Vec<WeightedIndex<f64>>,
    cursor: usize,
}

impl RoundRobinSampler {
    pub fn new(mdp: &TabularMdp) -> Self {
        let rows = (0..mdp.num_states())
            .flat_map(|x| (0..mdp.num_actions()).map(move |u| (x, u)))
            .map(|(x, u)| WeightedIndex::new(mdp.transition_row(x, u)).expect("validated kernel row"))
            .collect();
        RoundRobinSampler {
            num_actions: mdp.num_actions(),
            rows,
            cursor: 0,
        }
    }

    /// Length of one full sweep over the state-action pairs.
    pub fn cycle_len(&self) -> usize {
        self.rows.len()
    }

    /// Next `(x, u, x′)` triple.
    pub fn next_triple<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, usize, usize) {
        let pair = self.cursor;
        self.cursor = (self.cursor + 1) % self.rows.len();
        let next = self.rows[pair].sample(rng);
        (pair / self.num_actions, pair % self.num_actions, next)
    }
}
