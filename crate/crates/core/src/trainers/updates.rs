//! Per-step parameter updates for DQN, Double DQN and FG-DQN.
//!
//! Sign conventions: `δ = Z − Q(X,U;θ)` is the TD error and
//! `L = ½δ²` the instantaneous Bellman error. DQN moves along the
//! semi-gradient direction `δ∇Q(X,U;θ)`. FG-DQN descends the full gradient
//! `∇L = δ(γ∇Q(X′,v*;θ) − ∇Q(X,U;θ))`, differentiating through the
//! bootstrap term as well.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::qnet::{GradientVector, QModel};
use crate::replay::{ReplayBuffer, Transition};
use crate::state::State;
use crate::{Error, Result};

/// Batch elements handled per work item; fixed so the reduction order, and
/// hence every bit of the result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdMode {
    Dqn,
    DoubleDqn,
    FgDqn,
}

/// TD error and the two gradient occurrences of `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TdTerms {
    pub delta: f64,
    /// `∇_θ Q(X, U; θ)`
    pub grad_current: GradientVector,
    /// `γ∇_θ Q(X′, v*; θ)`, zero on terminal transitions.
    pub grad_target: GradientVector,
}

impl TdTerms {
    /// Semi-gradient (DQN) update direction `δ·∇Q(X,U)`.
    pub fn semi_gradient_direction(&self) -> Vec<f64> {
        self.grad_current.0.iter().map(|g| self.delta * g).collect()
    }

    /// Full-gradient (FG-DQN) descent direction `−δ(γ∇Q(X′,v*) − ∇Q(X,U))`.
    pub fn full_gradient_direction(&self) -> Vec<f64> {
        self.grad_current
            .0
            .iter()
            .zip(&self.grad_target.0)
            .map(|(gc, gt)| -self.delta * (gt - gc))
            .collect()
    }
}

/// Summary of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Mean of `δ²` over the batch, with the δ actually used by the update.
    pub mean_sq_td: f64,
}

/// TD error and both gradients for one transition.
///
/// - `Dqn`: bootstrap `max_v Q(X′,v;θ̄)`, action chosen by the target net.
/// - `DoubleDqn`: action `argmax_v Q(X′,v;θ)`, value `Q(X′,v;θ̄)`.
/// - `FgDqn`: bootstrap `max_v Q(X′,v;θ)` from the online net.
///
/// `grad_target` is always taken on the online net at the chosen action.
pub fn compute_td_terms<S: State>(
    online: &QModel,
    target: Option<&QModel>,
    t: &Transition<S>,
    discount: f64,
    mode: TdMode,
) -> Result<TdTerms> {
    let d = online.num_params();
    let (q, grad_current) = online.value_and_grad(&t.state, t.action)?;
    let mut grad_target = GradientVector::zeros(d);
    let bootstrap = if t.terminal {
        if mode != TdMode::FgDqn && target.is_none() {
            return Err(Error::MissingTargetNet);
        }
        0.0
    } else {
        let (action, value) = match mode {
            TdMode::FgDqn => online.argmax_action(&t.next_state)?,
            TdMode::Dqn => target.ok_or(Error::MissingTargetNet)?.argmax_action(&t.next_state)?,
            TdMode::DoubleDqn => {
                let target = target.ok_or(Error::MissingTargetNet)?;
                let (a, _) = online.argmax_action(&t.next_state)?;
                (a, target.q_value(&t.next_state, a)?)
            }
        };
        online.accumulate_grad(&t.next_state, action, discount, &mut grad_target.0)?;
        value
    };
    Ok(TdTerms {
        delta: t.reward + discount * bootstrap - q,
        grad_current,
        grad_target,
    })
}

fn sum_chunks(chunks: Vec<(Vec<f64>, f64)>, d: usize) -> (Vec<f64>, f64) {
    let mut total = vec![0.0; d];
    let mut sq = 0.0;
    for (g, s) in chunks {
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += gi;
        }
        sq += s;
    }
    (total, sq)
}

fn check_batch<S>(batch: &[&Transition<S>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty minibatch".into()));
    }
    Ok(())
}

/// Semi-gradient DQN (or Double DQN) step on a minibatch:
/// `θ ← θ + a · mean_k δ_k ∇Q(X_k, U_k; θ)`. The target net is untouched.
pub fn dqn_step<S: State>(
    online: &mut QModel,
    target: &QModel,
    batch: &[&Transition<S>],
    discount: f64,
    step_size: f64,
    double: bool,
    exec: Execution,
) -> Result<UpdateStats> {
    check_batch(batch)?;
    let d = online.num_params();
    let scale = 1.0 / batch.len() as f64;
    let model: &QModel = online;
    let chunks = exec.map_range(batch.len().div_ceil(CHUNK), |c| -> Result<(Vec<f64>, f64)> {
        let mut grad = vec![0.0; d];
        let mut sq = 0.0;
        for t in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
            let current = model.trace(&t.state, t.action)?;
            let bootstrap = if t.terminal {
                0.0
            } else if double {
                let (a, _) = model.argmax_action(&t.next_state)?;
                target.q_value(&t.next_state, a)?
            } else {
                target.argmax_action(&t.next_state)?.1
            };
            let delta = t.reward + discount * bootstrap - current.value();
            sq += delta * delta;
            model.backprop(&current, delta * scale, &mut grad)?;
        }
        Ok((grad, sq))
    });
    let (grad, sq) = sum_chunks(chunks.into_iter().collect::<Result<_>>()?, d);
    for (p, g) in online.net.params_mut().iter_mut().zip(&grad) {
        *p += step_size * g;
    }
    Ok(UpdateStats { mean_sq_td: sq * scale })
}

/// FG-DQN step on a minibatch.
///
/// For each element the TD error is either its own (`conditional = false`)
/// or `δ̄`, the bootstrap target averaged over every stored transition that
/// shares the element's `(X, U)`, minus `Q(X, U; θ)`. The parameters then
/// move as
///
/// `θ ← θ − a · (mean_k δ̄_k (γ∇Q(X′_k, v*_k; θ) − ∇Q(X_k, U_k; θ)) + σξ)`
///
/// with `v*_k` the greedy action at `X′_k` (lowest index on ties) and `ξ`
/// uniform on `[−1, 1]^d`, drawn only when `σ > 0`.
#[allow(clippy::too_many_arguments)]
pub fn fgdqn_step<S: State, R: Rng + ?Sized>(
    online: &mut QModel,
    batch: &[&Transition<S>],
    buffer: Option<&ReplayBuffer<S>>,
    discount: f64,
    step_size: f64,
    noise_amplitude: f64,
    rng: &mut R,
    conditional: bool,
    exec: Execution,
) -> Result<UpdateStats> {
    check_batch(batch)?;
    let d = online.num_params();
    let scale = 1.0 / batch.len() as f64;
    let model: &QModel = online;

    let averaged_targets = if conditional {
        let buffer = buffer.ok_or_else(|| Error::InvalidConfig("conditional replay needs the replay buffer".into()))?;
        Some(conditional_targets(model, batch, buffer, discount, exec)?)
    } else {
        None
    };

    let chunks = exec.map_range(batch.len().div_ceil(CHUNK), |c| -> Result<(Vec<f64>, f64)> {
        let mut grad = vec![0.0; d];
        let mut sq = 0.0;
        let end = ((c + 1) * CHUNK).min(batch.len());
        for k in c * CHUNK..end {
            let t = batch[k];
            let current = model.trace(&t.state, t.action)?;
            let next = if t.terminal {
                None
            } else {
                Some(model.greedy_trace(&t.next_state)?.1)
            };
            let target = match &averaged_targets {
                Some(avg) => avg[k],
                None => t.reward + discount * next.as_ref().map_or(0.0, |n| n.value()),
            };
            let delta = target - current.value();
            sq += delta * delta;
            // Gradient of ½δ² is δ(γ∇Q′ − ∇Q); accumulate its batch mean.
            if let Some(next) = &next {
                model.backprop(next, delta * discount * scale, &mut grad)?;
            }
            model.backprop(&current, -delta * scale, &mut grad)?;
        }
        Ok((grad, sq))
    });
    let (grad, sq) = sum_chunks(chunks.into_iter().collect::<Result<_>>()?, d);

    let params = online.net.params_mut();
    if noise_amplitude > 0.0 {
        for (p, g) in params.iter_mut().zip(&grad) {
            let xi: f64 = rng.gen_range(-1.0..=1.0);
            *p -= step_size * (g + noise_amplitude * xi);
        }
    } else {
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= step_size * g;
        }
    }
    Ok(UpdateStats { mean_sq_td: sq * scale })
}

/// For each batch element, the mean of `r + γ max_v Q(X′, v; θ)` over all
/// stored transitions sharing its `(X, U)`.
///
/// Each distinct next state is evaluated once.
fn conditional_targets<S: State>(
    model: &QModel,
    batch: &[&Transition<S>],
    buffer: &ReplayBuffer<S>,
    discount: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let sets = batch
        .iter()
        .map(|t| buffer.sample_conditional(&t.state, t.action))
        .collect::<Result<Vec<_>>>()?;

    let mut slot_of: HashMap<S::Key, usize> = HashMap::new();
    let mut distinct: Vec<&S> = Vec::new();
    for tr in sets.iter().flatten().filter(|tr| !tr.terminal) {
        slot_of.entry(tr.next_state.key()).or_insert_with(|| {
            distinct.push(&tr.next_state);
            distinct.len() - 1
        });
    }
    let max_q = exec
        .map(&distinct, |s| model.argmax_action(*s).map(|(_, v)| v))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

    Ok(sets
        .iter()
        .map(|set| {
            let total: f64 = set
                .iter()
                .map(|tr| {
                    let boot = if tr.terminal {
                        0.0
                    } else {
                        max_q[slot_of[&tr.next_state.key()]]
                    };
                    tr.reward + discount * boot
                })
                .sum();
            total / set.len() as f64
        })
        .collect())
}

/// Copies `θ` into `θ̄` when `n` is a multiple of `period`. Returns whether
/// a copy happened.
pub fn target_sync(online: &QModel, target: &mut QModel, n: u64, period: u64) -> Result<bool> {
    if period == 0 {
        return Err(Error::InvalidConfig("target sync period must be at least 1".into()));
    }
    if n % period == 0 {
        target.net.set_params(online.params())?;
        return Ok(true);
    }
    Ok(false)
}

/// With probability `ε` a uniformly random action, otherwise the greedy one.
pub fn epsilon_greedy<S: State, R: Rng + ?Sized>(
    model: &QModel,
    state: &S,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..model.num_actions()))
    } else {
        Ok(model.argmax_action(state)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{Activation, Encoding, MlpTopology, QNetwork};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `Q ≡ θ` for every state and action: a bias-only single output.
    fn scalar_model(theta: f64) -> QModel {
        let enc = Encoding::StateVector {
            state_dim: 1,
            num_actions: 1,
        };
        let mut t = MlpTopology::new(1, vec![], 1, Activation::Relu);
        t.output_bias = true;
        // weight 0, bias θ
        QModel::new(enc, QNetwork::from_params(t, vec![0.0, theta]).unwrap()).unwrap()
    }

    fn self_loop() -> Transition<usize> {
        Transition {
            state: 0,
            action: 0,
            reward: 1.0,
            next_state: 0,
            terminal: false,
        }
    }

    #[test]
    fn scalar_fgdqn_terms() {
        let model = scalar_model(0.3);
        let terms = compute_td_terms(&model, None, &self_loop(), 0.5, TdMode::FgDqn).unwrap();
        assert!((terms.delta - (1.0 - 0.5 * 0.3)).abs() < 1e-15);
        assert_eq!(terms.grad_current.0, vec![0.0, 1.0]);
        assert_eq!(terms.grad_target.0, vec![0.0, 0.5]);
    }

    #[test]
    fn terminal_terms_drop_target_gradient() {
        let model = scalar_model(0.7);
        let mut t = self_loop();
        t.terminal = true;
        t.reward = 3.0;
        for mode in [TdMode::FgDqn, TdMode::Dqn, TdMode::DoubleDqn] {
            let terms = compute_td_terms(&model, Some(&model), &t, 0.5, mode).unwrap();
            assert!((terms.delta - (3.0 - 0.7)).abs() < 1e-15);
            assert!(terms.grad_target.0.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn dqn_modes_need_a_target() {
        let model = scalar_model(0.0);
        assert!(matches!(
            compute_td_terms(&model, None, &self_loop(), 0.5, TdMode::Dqn),
            Err(Error::MissingTargetNet)
        ));
    }

    #[test]
    fn scalar_dqn_step() {
        let mut model = scalar_model(0.0);
        let target = scalar_model(0.0);
        let t = self_loop();
        dqn_step(&mut model, &target, &[&t], 0.5, 0.1, false, Execution::Sequential).unwrap();
        assert!((model.params()[1] - 0.1).abs() < 1e-15);
        assert_eq!(target.params()[1], 0.0);
    }

    #[test]
    fn opposite_deltas_cancel() {
        let mut model = scalar_model(0.0);
        let target = scalar_model(0.0);
        let mut up = self_loop();
        up.terminal = true;
        let mut down = up.clone();
        down.reward = -1.0;
        dqn_step(
            &mut model,
            &target,
            &[&up, &down],
            0.5,
            0.1,
            false,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(model.params()[1], 0.0);
    }

    #[test]
    fn scalar_fgdqn_step_and_fixed_point() {
        let mut model = scalar_model(0.0);
        let t = self_loop();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fgdqn_step(
            &mut model,
            &[&t],
            None,
            0.5,
            0.1,
            0.0,
            &mut rng,
            false,
            Execution::Sequential,
        )
        .unwrap();
        assert!((model.params()[1] - 0.05).abs() < 1e-15);
        for _ in 0..2000 {
            fgdqn_step(
                &mut model,
                &[&t],
                None,
                0.5,
                0.1,
                0.0,
                &mut rng,
                false,
                Execution::Sequential,
            )
            .unwrap();
        }
        assert!((model.params()[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_delta_zero_noise_is_stationary() {
        let mut model = scalar_model(2.0);
        let before = model.clone();
        let t = self_loop();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fgdqn_step(
            &mut model,
            &[&t],
            None,
            0.5,
            0.1,
            0.0,
            &mut rng,
            false,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn noise_moves_parameters() {
        let mut model = scalar_model(2.0);
        let t = self_loop();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fgdqn_step(
            &mut model,
            &[&t],
            None,
            0.5,
            0.1,
            1.0,
            &mut rng,
            false,
            Execution::Sequential,
        )
        .unwrap();
        let moved = (model.params()[1] - 2.0).abs();
        assert!(moved > 0.0 && moved <= 0.1);
    }

    #[test]
    fn conditional_replay_needs_buffer() {
        let mut model = scalar_model(0.0);
        let t = self_loop();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = fgdqn_step(
            &mut model,
            &[&t],
            None,
            0.5,
            0.1,
            0.0,
            &mut rng,
            true,
            Execution::Sequential,
        );
        assert!(r.is_err());
    }

    #[test]
    fn target_sync_periods() {
        let online = scalar_model(1.0);
        let mut target = scalar_model(0.0);
        assert!(!target_sync(&online, &mut target, 5, 3).unwrap());
        assert_eq!(target.params()[1], 0.0);
        assert!(target_sync(&online, &mut target, 6, 3).unwrap());
        assert_eq!(target.params()[1], 1.0);
        let mut t2 = scalar_model(5.0);
        for n in 0..4 {
            assert!(target_sync(&online, &mut t2, n, 1).unwrap());
        }
        assert!(target_sync(&online, &mut t2, 0, 0).is_err());
    }

    #[test]
    fn greedy_when_epsilon_zero() {
        let enc = Encoding::StateVector {
            state_dim: 1,
            num_actions: 3,
        };
        let t = enc.topology(vec![], Activation::Relu);
        let model = QModel::new(
            enc,
            QNetwork::from_params(t, vec![0.0, 0.0, 0.0, 1.0, 5.0, 2.0]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&model, &0usize, 0.0, &mut rng).unwrap(), 1);
        }
        assert!(epsilon_greedy(&model, &0usize, 1.5, &mut rng).is_err());
    }
}
