use super::{
    dqn_step, epsilon_greedy, fgdqn_step, target_sync, Algorithm, Learner, NetworkSpec, RunRngs, TrainerConfig,
};
use crate::envs::EpisodicEnv;
use crate::metrics::RunMetrics;
use crate::qnet::{Encoding, QModel};
use crate::replay::{ReplayBuffer, Transition};
use crate::{Error, Result};

/// Raw 4-dimensional cart-pole state in, one value per action out.
pub fn cartpole_encoding() -> Encoding {
    Encoding::StateVector {
        state_dim: 4,
        num_actions: 2,
    }
}

/// On-policy training on an episodic environment.
///
/// Actions are ε-greedy in the online network. Every environment step is
/// stored in replay, then a minibatch is drawn and one update applied. The
/// target network of DQN and Double DQN is refreshed every
/// `target_sync_period` episodes. Per episode the total reward, the length
/// and the discounted return are recorded.
///
/// Stops early, flagging `diverged_at` with the update count, if the
/// parameters become non-finite.
pub fn train_on_policy<E: EpisodicEnv>(
    env: &mut E,
    encoding: Encoding,
    config: &TrainerConfig,
    network: &NetworkSpec,
    episodes: usize,
) -> Result<(Learner, RunMetrics)> {
    config.validate()?;
    if config.algorithm == Algorithm::TabularQ {
        return Err(Error::Unsupported(
            "tabular Q-learning needs a finite state space".into(),
        ));
    }
    if encoding.num_actions() != env.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: env.num_actions(),
            got: encoding.num_actions(),
        });
    }

    let mut rngs = RunRngs::new(config.seed);
    let mut online = network.build(encoding, &mut rngs.init)?;
    let mut target: Option<QModel> = config.algorithm.uses_target_net().then(|| online.clone());
    let mut buffer: ReplayBuffer<E::State> = ReplayBuffer::new(config.replay_capacity)?;
    let mut metrics = RunMetrics::new(config.seed);
    let gamma = config.discount;
    let mut n: u64 = 0;

    'episodes: for episode in 0..episodes as u64 {
        if let Some(target) = target.as_mut() {
            target_sync(&online, target, episode, config.target_sync_period)?;
        }
        let mut state = env.reset(&mut rngs.env);
        let (mut total, mut discounted, mut weight, mut length) = (0.0, 0.0, 1.0, 0usize);
        loop {
            let action = epsilon_greedy(&online, &state, config.epsilon, &mut rngs.replay)?;
            let step = env.step(action)?;
            total += step.reward;
            discounted += weight * step.reward;
            weight *= gamma;
            length += 1;
            buffer.push(Transition {
                state: state.clone(),
                action,
                reward: step.reward,
                next_state: step.next_state.clone(),
                terminal: step.terminal,
            });

            let batch = buffer.sample_minibatch(config.batch_size, &mut rngs.replay)?;
            let a_n = config.schedule.step_size(n);
            let groups: Vec<&[&Transition<E::State>]> = if config.sequential_inner_updates {
                batch.chunks(1).collect()
            } else {
                vec![&batch[..]]
            };
            for group in groups {
                match &target {
                    Some(target) => {
                        let double = config.algorithm == Algorithm::DoubleDqn;
                        dqn_step(&mut online, target, group, gamma, a_n, double, config.execution)?;
                    }
                    None => {
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
                }
            }
            if !online.net.is_finite() {
                metrics.diverged_at = Some(n);
                break 'episodes;
            }
            n += 1;

            if step.terminal {
                break;
            }
            state = step.next_state;
        }
        metrics.episode_reward.push(total);
        metrics.episode_length.push(length);
        metrics.episode_discounted_return.push(discounted);
    }
    Ok((Learner::Network { model: online }, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CartPole, CartPoleParams};
    use crate::exec::Execution;
    use crate::qnet::Activation;
    use crate::trainers::StepSizeSchedule;

    fn config(algorithm: Algorithm) -> TrainerConfig {
        TrainerConfig {
            algorithm,
            schedule: StepSizeSchedule::Constant { base: 1e-3 },
            discount: 0.99,
            batch_size: 8,
            target_sync_period: 2,
            epsilon: 0.1,
            noise_amplitude: 0.0,
            conditional_replay: false,
            sequential_inner_updates: false,
            replay_capacity: 1000,
            seed: 11,
            execution: Execution::Sequential,
        }
    }

    #[test]
    fn records_one_row_per_episode() {
        let net = NetworkSpec::new(vec![8], Activation::Relu);
        for alg in [Algorithm::Dqn, Algorithm::DoubleDqn, Algorithm::Fgdqn] {
            let mut env = CartPole::new(CartPoleParams::default()).unwrap();
            let (_, m) = train_on_policy(&mut env, cartpole_encoding(), &config(alg), &net, 5).unwrap();
            assert_eq!(m.episodes(), 5);
            assert!(m.is_consistent());
            for ((&r, &l), &g) in m
                .episode_reward
                .iter()
                .zip(&m.episode_length)
                .zip(&m.episode_discounted_return)
            {
                assert_eq!(r, l as f64);
                let expected = (1.0 - 0.99f64.powi(l as i32)) / (1.0 - 0.99);
                assert!((g - expected).abs() < 1e-9);
                assert!((1..=200).contains(&l));
            }
        }
    }

    #[test]
    fn same_seed_same_run() {
        let net = NetworkSpec::new(vec![8], Activation::Gelu);
        let run = || {
            let mut env = CartPole::new(CartPoleParams::default()).unwrap();
            train_on_policy(&mut env, cartpole_encoding(), &config(Algorithm::Fgdqn), &net, 4).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tabular_is_rejected() {
        let net = NetworkSpec::new(vec![8], Activation::Relu);
        let mut env = CartPole::new(CartPoleParams::default()).unwrap();
        assert!(train_on_policy(&mut env, cartpole_encoding(), &config(Algorithm::TabularQ), &net, 1).is_err());
    }
}
