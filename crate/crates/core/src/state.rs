use std::fmt::Debug;
use std::hash::Hash;

/// An environment observation that can be fed to a Q-network and used as a
/// replay-index key.
///
/// Keys compare by exact equality; for continuous states that means
/// bit-identical coordinates.
pub trait State: Clone + Debug + Send + Sync {
    type Key: Clone + Debug + Eq + Hash + Send + Sync;

    fn key(&self) -> Self::Key;

    /// Position in a finite state space, if the state is discrete.
    fn index(&self) -> Option<usize> {
        None
    }

    /// Raw feature vector for networks that take the state directly.
    fn features(&self) -> Vec<f64>;
}

impl State for usize {
    type Key = usize;

    fn key(&self) -> usize {
        *self
    }

    fn index(&self) -> Option<usize> {
        Some(*self)
    }

    fn features(&self) -> Vec<f64> {
        vec![*self as f64]
    }
}
