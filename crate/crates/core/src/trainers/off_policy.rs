use super::{
    dqn_step, fgdqn_step, q_learning_step, target_sync, Algorithm, Learner, NetworkSpec, RunRngs, TrainerConfig,
};
use crate::envs::RoundRobinSampler;
use crate::mdp::{DeterministicPolicy, QTable, TabularMdp};
use crate::metrics::{
    dqn_bellman_error, hamming_distance, q_table_of, true_bellman_error_table, uniform_weights, RunMetrics,
};
use crate::qnet::{Encoding, QModel};
use crate::replay::{ReplayBuffer, Transition};
use crate::{Error, Result};

/// One-hot `(state, action)` encoding for a finite MDP.
pub fn forest_encoding(mdp: &TabularMdp) -> Encoding {
    Encoding::OneHotPair {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
    }
}

/// Off-policy training on a finite MDP with round-robin sampling.
///
/// Each iteration draws the next `(x, u, x′)` from the sampler and applies
/// one update: a tabular Q-learning step, or for the network learners a
/// push into replay followed by a minibatch update. After every iteration
/// the sampled Bellman error of the minibatch, the exact Bellman error under
/// uniform weights and, when `reference` is given, the Hamming distance of
/// the greedy policy to it are recorded.
///
/// Stops early, flagging `diverged_at`, if the parameters become
/// non-finite.
pub fn train_off_policy(
    mdp: &TabularMdp,
    config: &TrainerConfig,
    network: &NetworkSpec,
    iterations: u64,
    reference: Option<&DeterministicPolicy>,
) -> Result<(Learner, RunMetrics)> {
    config.validate()?;
    if (config.discount - mdp.discount()).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "trainer discount {} differs from the mdp's {}",
            config.discount,
            mdp.discount()
        )));
    }
    if let Some(r) = reference {
        if r.len() != mdp.num_states() {
            return Err(Error::LengthMismatch(r.len(), mdp.num_states()));
        }
    }

    let mut rngs = RunRngs::new(config.seed);
    let mut sampler = RoundRobinSampler::new(mdp);
    let mut metrics = RunMetrics::new(config.seed);
    let weights = uniform_weights(mdp);
    let gamma = mdp.discount();

    let record = |metrics: &mut RunMetrics, sampled: f64, table: &QTable| -> Result<()> {
        metrics.dqn_bellman_error.push(sampled);
        metrics
            .true_bellman_error
            .push(true_bellman_error_table(table, mdp, &weights)?);
        if let Some(r) = reference {
            metrics
                .hamming_distance
                .push(hamming_distance(&table.greedy_policy(), r)?);
        }
        Ok(())
    };

    if config.algorithm == Algorithm::TabularQ {
        let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
        for n in 0..iterations {
            let (x, u, y) = sampler.next_triple(&mut rngs.env);
            let t = Transition {
                state: x,
                action: u,
                reward: mdp.reward(x, u),
                next_state: y,
                terminal: false,
            };
            let td = t.reward + gamma * q.values[y].iter().copied().fold(f64::NEG_INFINITY, f64::max) - q.values[x][u];
            q_learning_step(&mut q, &t, gamma, config.schedule.step_size(n));
            if q.values[x][u].is_nan() || q.values[x][u].is_infinite() {
                metrics.diverged_at = Some(n);
                break;
            }
            record(&mut metrics, td * td, &q)?;
        }
        return Ok((Learner::Tabular { table: q }, metrics));
    }

    let encoding = forest_encoding(mdp);
    let mut online = network.build(encoding, &mut rngs.init)?;
    let mut target: Option<QModel> = config.algorithm.uses_target_net().then(|| online.clone());
    let mut buffer = ReplayBuffer::new(config.replay_capacity)?;

    for n in 0..iterations {
        let (x, u, y) = sampler.next_triple(&mut rngs.env);
        buffer.push(Transition {
            state: x,
            action: u,
            reward: mdp.reward(x, u),
            next_state: y,
            terminal: false,
        });
        let batch = buffer.sample_minibatch(config.batch_size, &mut rngs.replay)?;
        let sampled = dqn_bellman_error(&online, &batch, gamma)?;
        let a_n = config.schedule.step_size(n);

        if let Some(target) = target.as_mut() {
            target_sync(&online, target, n, config.target_sync_period)?;
        }
        let groups: Vec<&[&Transition<usize>]> = if config.sequential_inner_updates {
            batch.chunks(1).collect()
        } else {
            vec![&batch[..]]
        };
        for group in groups {
            match (&target, config.algorithm) {
                (Some(target), Algorithm::Dqn | Algorithm::DoubleDqn) => {
                    let double = config.algorithm == Algorithm::DoubleDqn;
                    dqn_step(&mut online, target, group, gamma, a_n, double, config.execution)?;
                }
                (_, Algorithm::Fgdqn) => {
                    fgdqn_step(
                        &mut online,
                        group,
                        Some(&buffer),
                        gamma,
                        a_n,
                        config.noise_amplitude,
                        &mut rngs.noise,
                        config.conditional_replay,
                        config.execution,
                    )?;
                }
                _ => unreachable!("tabular handled above; dqn modes own a target"),
            }
        }

        if !online.net.is_finite() {
            metrics.diverged_at = Some(n);
            break;
        }
        let table = q_table_of(&online, mdp.num_states())?;
        record(&mut metrics, sampled, &table)?;
    }
    Ok((Learner::Network { model: online }, metrics))
}
