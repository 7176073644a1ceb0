use crate::mdp::QTable;
use crate::replay::Transition;

/// One asynchronous Q-learning update; only `Q(X, U)` changes.
///
/// `Q(X,U) += a·(r + γ max_v Q(X′,v) − Q(X,U))`, with the bootstrap term
/// dropped on terminal transitions.
pub fn q_learning_step(q: &mut QTable, t: &Transition<usize>, discount: f64, step_size: f64) {
    let bootstrap = if t.terminal {
        0.0
    } else {
        q.values[t.next_state].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let current = q.values[t.state][t.action];
    q.values[t.state][t.action] = current + step_size * (t.reward + discount * bootstrap - current);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition() -> Transition<usize> {
        Transition {
            state: 1,
            action: 0,
            reward: 2.0,
            next_state: 2,
            terminal: false,
        }
    }

    #[test]
    fn zero_step_leaves_table_alone() {
        let mut q = QTable {
            values: vec![vec![0.5, 1.0]; 3],
        };
        let before = q.clone();
        q_learning_step(&mut q, &transition(), 0.9, 0.0);
        assert_eq!(q, before);
    }

    #[test]
    fn only_visited_entry_moves() {
        let mut q = QTable {
            values: vec![vec![0.5, 1.0]; 3],
        };
        let before = q.clone();
        q_learning_step(&mut q, &transition(), 0.9, 0.5);
        assert_eq!(q.values[1][0], 0.5 + 0.5 * (2.0 + 0.9 * 1.0 - 0.5));
        for x in 0..3 {
            for u in 0..2 {
                if (x, u) != (1, 0) {
                    assert_eq!(q.values[x][u], before.values[x][u]);
                }
            }
        }
    }

    #[test]
    fn terminal_drops_bootstrap() {
        let mut q = QTable::zeros(3, 2);
        q.values[2] = vec![10.0, 10.0];
        let mut t = transition();
        t.terminal = true;
        q_learning_step(&mut q, &t, 0.9, 1.0);
        assert_eq!(q.values[1][0], 2.0);
    }
}
