//! Ring-buffer experience replay with a `(state, action)` index.
//!
//! Besides uniform minibatches, the buffer can return every stored
//! transition that shares a given `(state, action)` pair. Averaging a target
//! over that set is a Monte Carlo estimate of the conditional expectation
//! over next states.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::state::State;
use crate::{Error, Result};

/// Default capacity when none is configured.
pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
}

impl<S: State> Transition<S> {
    pub fn key(&self) -> (S::Key, usize) {
        (self.state.key(), self.action)
    }
}

type PairKey<S> = (<S as State>::Key, usize);

#[derive(Clone, Debug)]
pub struct ReplayBuffer<S: State> {
    capacity: usize,
    slots: Vec<Transition<S>>,
    /// Sequence number of the next push; live entries are
    /// `pushed - len .. pushed`.
    pushed: u64,
    /// Sequence numbers per key, oldest first.
    index: HashMap<PairKey<S>, VecDeque<u64>>,
}

impl<S: State> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
            index: HashMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn slot(&self, seq: u64) -> usize {
        (seq % self.capacity as u64) as usize
    }

    fn oldest(&self) -> u64 {
        self.pushed - self.slots.len() as u64
    }

    /// Stores `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition<S>) {
        let seq = self.pushed;
        let key = t.key();
        if self.slots.len() == self.capacity {
            let evicted = self.oldest();
            let slot = self.slot(evicted);
            let old_key = self.slots[slot].key();
            if let Some(list) = self.index.get_mut(&old_key) {
                debug_assert_eq!(list.front(), Some(&evicted));
                list.pop_front();
                if list.is_empty() {
                    self.index.remove(&old_key);
                }
            }
            self.slots[slot] = t;
        } else {
            self.slots.push(t);
        }
        self.index.entry(key).or_default().push_back(seq);
        self.pushed += 1;
    }

    /// Live transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> + '_ {
        (self.oldest()..self.pushed).map(move |seq| &self.slots[self.slot(seq)])
    }

    /// `batch_size` uniform draws with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition<S>>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let oldest = self.oldest();
        let len = self.slots.len() as u64;
        Ok((0..batch_size)
            .map(|_| &self.slots[self.slot(oldest + rng.gen_range(0..len))])
            .collect())
    }

    pub fn contains_key(&self, state: &S, action: usize) -> bool {
        self.index.contains_key(&(state.key(), action))
    }

    /// Number of stored transitions for `(state, action)`.
    pub fn count(&self, state: &S, action: usize) -> usize {
        self.index.get(&(state.key(), action)).map_or(0, VecDeque::len)
    }

    /// Every stored transition from `(state, action)`, oldest first.
    pub fn sample_conditional(&self, state: &S, action: usize) -> Result<Vec<&Transition<S>>> {
        let seqs = self.index.get(&(state.key(), action)).ok_or(Error::MissingKey)?;
        Ok(seqs.iter().map(|&seq| &self.slots[self.slot(seq)]).collect())
    }

    /// Mean of `target` over the transitions stored for `(state, action)`.
    pub fn conditional_target_average<F>(&self, state: &S, action: usize, mut target: F) -> Result<f64>
    where
        F: FnMut(&Transition<S>) -> f64,
    {
        let matches = self.sample_conditional(state, action)?;
        let total: f64 = matches.iter().map(|t| target(t)).sum();
        Ok(total / matches.len() as f64)
    }

    /// Checks that the index describes exactly the live contents.
    pub fn check_consistency(&self) -> bool {
        let indexed: usize = self.index.values().map(VecDeque::len).sum();
        if indexed != self.len() {
            return false;
        }
        let oldest = self.oldest();
        self.index.iter().all(|(key, seqs)| {
            seqs.iter()
                .all(|&seq| seq >= oldest && seq < self.pushed && &self.slots[self.slot(seq)].key() == key)
        })
    }
}

impl<S: State + Serialize> ReplayBuffer<S> {
    /// Writes the live transitions, oldest first, as a JSON array.
    pub fn dump_json<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let all: Vec<&Transition<S>> = self.iter().collect();
        serde_json::to_writer(writer, &all)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::CUT;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(x: usize, u: usize, y: usize) -> Transition<usize> {
        Transition {
            state: x,
            action: u,
            reward: x as f64,
            next_state: y,
            terminal: false,
        }
    }

    #[test]
    fn eviction_drops_oldest_from_index() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        buf.push(t(0, 0, 1));
        buf.push(t(1, 0, 2));
        buf.push(t(2, 0, 3));
        buf.push(t(3, 0, 4));
        assert_eq!(buf.len(), 3);
        assert!(!buf.contains_key(&0, 0));
        assert!(buf.check_consistency());
        let states: Vec<usize> = buf.iter().map(|t| t.state).collect();
        assert_eq!(states, vec![1, 2, 3]);
    }

    #[test]
    fn pushed_item_is_conditionally_retrievable() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        buf.push(t(4, 1, 0));
        let got = buf.sample_conditional(&4, 1).unwrap();
        assert_eq!(got, vec![&t(4, 1, 0)]);
        assert!(matches!(buf.sample_conditional(&4, 0), Err(Error::MissingKey)));
    }

    #[test]
    fn conditional_sets_follow_eviction() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        for _ in 0..3 {
            buf.push(t(2, CUT, 0));
        }
        buf.push(t(5, 0, 6));
        assert_eq!(buf.sample_conditional(&2, CUT).unwrap().len(), 3);
        assert!(buf
            .sample_conditional(&2, CUT)
            .unwrap()
            .iter()
            .all(|t| t.next_state == 0));
        buf.push(t(6, 0, 7));
        assert_eq!(buf.sample_conditional(&2, CUT).unwrap().len(), 2);
    }

    #[test]
    fn minibatch_from_single_item() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        buf.push(t(1, 1, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample_minibatch(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|b| **b == t(1, 1, 0)));
    }

    #[test]
    fn empty_buffer_cannot_be_sampled() {
        let buf: ReplayBuffer<usize> = ReplayBuffer::new(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_minibatch(1, &mut rng), Err(Error::EmptyBuffer)));
        assert!(ReplayBuffer::<usize>::new(0).is_err());
    }

    #[test]
    fn average_of_single_match_is_its_target() {
        let mut buf = ReplayBuffer::new(5).unwrap();
        buf.push(t(3, 0, 4));
        let avg = buf
            .conditional_target_average(&3, 0, |tr| 2.0 * tr.next_state as f64)
            .unwrap();
        assert_eq!(avg, 8.0);
    }

    #[test]
    fn dump_lists_live_transitions() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.push(t(0, 0, 1));
        buf.push(t(1, 1, 0));
        buf.push(t(2, 0, 3));
        let mut out = Vec::new();
        buf.dump_json(&mut out).unwrap();
        let back: Vec<Transition<usize>> = serde_json::from_slice(&out).unwrap();
        assert_eq!(back, vec![t(1, 1, 0), t(2, 0, 3)]);
    }
}
