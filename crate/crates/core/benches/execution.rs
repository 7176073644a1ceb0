use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fgdqn::envs::{cartpole_reset, forest_build_mdp, CartPoleParams, CartPoleState, ForestParams, RoundRobinSampler};
use fgdqn::exec::{run_seeds, Execution};
use fgdqn::qnet::Activation;
use fgdqn::replay::{ReplayBuffer, Transition};
use fgdqn::trainers::{
    cartpole_encoding, dqn_step, fgdqn_step, forest_encoding, train_off_policy, Algorithm, NetworkSpec,
    StepSizeSchedule, TrainerConfig,
};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn cartpole_buffer(rng: &mut ChaCha8Rng, len: usize) -> ReplayBuffer<CartPoleState> {
    let params = CartPoleParams::default();
    let mut buffer = ReplayBuffer::new(len).unwrap();
    let mut s = cartpole_reset(rng);
    for _ in 0..len {
        let action = rng.gen_range(0..2);
        let next = params.dynamics(s, action);
        let terminal = params.out_of_bounds(&next);
        buffer.push(Transition {
            state: s,
            action,
            reward: 1.0,
            next_state: next,
            terminal,
        });
        s = if terminal { cartpole_reset(rng) } else { next };
    }
    buffer
}

fn cartpole_steps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let buffer = cartpole_buffer(&mut rng, 5000);
    let spec = NetworkSpec::new(vec![16, 32, 32], Activation::Relu);
    let model = spec.build(cartpole_encoding(), &mut rng).unwrap();
    let batch = buffer.sample_minibatch(128, &mut rng).unwrap();

    let mut group = c.benchmark_group("cartpole_b128");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("fgdqn_step", name), |b| {
            let mut online = model.clone();
            let mut noise = ChaCha8Rng::seed_from_u64(2);
            b.iter(|| fgdqn_step(&mut online, &batch, None, 0.99, 1e-6, 0.0, &mut noise, false, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("dqn_step", name), |b| {
            let mut online = model.clone();
            b.iter(|| dqn_step(&mut online, &model, &batch, 0.99, 1e-6, false, exec).unwrap())
        });
    }
    group.finish();
}

fn forest_conditional(c: &mut Criterion) {
    let mdp = forest_build_mdp(&ForestParams::new(0.05, 0.8)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sampler = RoundRobinSampler::new(&mdp);
    let mut buffer = ReplayBuffer::new(10_000).unwrap();
    for _ in 0..10_000 {
        let (x, u, y) = sampler.next_triple(&mut rng);
        buffer.push(Transition {
            state: x,
            action: u,
            reward: mdp.reward(x, u),
            next_state: y,
            terminal: false,
        });
    }
    let spec = NetworkSpec::new(vec![200], Activation::Relu);
    let model = spec.build(forest_encoding(&mdp), &mut rng).unwrap();
    let batch = buffer.sample_minibatch(25, &mut rng).unwrap();

    let mut group = c.benchmark_group("forest_conditional_b25");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("fgdqn_step", name), |b| {
            let mut online = model.clone();
            let mut noise = ChaCha8Rng::seed_from_u64(4);
            b.iter(|| {
                fgdqn_step(
                    &mut online,
                    &batch,
                    Some(&buffer),
                    0.8,
                    1e-6,
                    0.0,
                    &mut noise,
                    true,
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn multi_seed(c: &mut Criterion) {
    let mdp = forest_build_mdp(&ForestParams::new(0.05, 0.8)).unwrap();
    let spec = NetworkSpec::new(vec![32], Activation::Relu);
    let seeds: Vec<u64> = (0..4).collect();
    let mut group = c.benchmark_group("forest_runs_x4");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                run_seeds(exec, &seeds, |seed| {
                    let config = TrainerConfig {
                        algorithm: Algorithm::Fgdqn,
                        schedule: StepSizeSchedule::Constant { base: 1e-2 },
                        discount: 0.8,
                        batch_size: 25,
                        target_sync_period: 100,
                        epsilon: 0.0,
                        noise_amplitude: 0.0,
                        conditional_replay: true,
                        sequential_inner_updates: false,
                        replay_capacity: 100_000,
                        seed,
                        execution: Execution::Sequential,
                    };
                    train_off_policy(&mdp, &config, &spec, 200, None).unwrap().1
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, cartpole_steps, forest_conditional, multi_seed);
criterion_main!(benches);
