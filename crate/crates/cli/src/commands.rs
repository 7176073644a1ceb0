use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fgdqn::envs::{cartpole_reset, forest_build_mdp, CartPole, EpisodicEnv, ForestParams};
use fgdqn::gradcheck::{
    backprop_gradient, check_full_gradient, check_network_gradient, fgdqn_direction, random_inputs, GradCheckReport,
    DEFAULT_STEP,
};
use fgdqn::mdp::{policy_iteration, q_value_iteration, DeterministicPolicy, QTable, ValueFunction, ORACLE_TOL};
use fgdqn::metrics::{
    aggregate_rows, aggregate_series, greedy_policy_of_net, hamming_distance, moving_average, running_average,
    write_aggregate_csv, AggregateRow, CiMethod, RunMetrics,
};
use fgdqn::qnet::{Activation, Encoding, MlpTopology, QNetwork};
use fgdqn::replay::Transition;
use fgdqn::trainers::{cartpole_encoding, forest_encoding, Learner, NetworkSpec};

use crate::config::{Environment, RunConfig};
use crate::plot::{line_plot, Curve};
use crate::run::{run_all, write_outcome, write_summary, RunOutcome};

#[derive(Debug, Serialize)]
pub struct Solution {
    pub policy: DeterministicPolicy,
    pub values: ValueFunction,
    pub q: QTable,
}

/// Exact optimal policy, values and action values of the configured forest.
pub fn solve(config: &RunConfig, out: Option<&Path>, w: &mut dyn Write) -> Result<Solution> {
    if config.is_cartpole() {
        bail!("solve needs a tabular environment; cartpole has none");
    }
    let mdp = config.mdp()?;
    let (policy, values) = policy_iteration(&mdp)?;
    let q = q_value_iteration(&mdp, ORACLE_TOL, 1_000_000)?;
    writeln!(w, "policy {}", serde_json::to_string(&policy.actions)?)?;
    writeln!(w, "values {}", serde_json::to_string(&values.values)?)?;
    let solution = Solution { policy, values, q };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let file = BufWriter::new(File::create(out.join("solution.json"))?);
        serde_json::to_writer_pretty(file, &solution)?;
    }
    Ok(solution)
}

/// Trains every configured (algorithm, seed) pair and writes the run files.
pub fn train(config: &RunConfig, out: &Path, threads: Option<usize>, w: &mut dyn Write) -> Result<Vec<RunOutcome>> {
    let outcomes = run_all(config, threads)?;
    for o in &outcomes {
        write_outcome(out, config, o)?;
        let s = o.summary();
        write!(w, "{:<10} seed {:<4}", o.algorithm.name(), o.seed)?;
        if let Some(h) = s.final_hamming_distance {
            write!(w, " hamming {h}")?;
        }
        if let Some(e) = s.final_running_bellman_error {
            write!(w, " running_bellman_error {e:.5}")?;
        }
        if let Some(r) = s.final_reward_ma100 {
            write!(w, " reward_ma100 {r:.1} best {:.1}", s.best_reward_ma100.unwrap_or(r))?;
        }
        if let Some(n) = s.diverged_at {
            write!(w, " DIVERGED at {n}")?;
        }
        writeln!(w)?;
    }
    write_summary(out, config, &outcomes)?;
    Ok(outcomes)
}

/// A per-run series transformed before aggregation.
struct Panel {
    name: &'static str,
    title: &'static str,
    y_label: &'static str,
    stride: usize,
    extract: fn(&RunMetrics) -> Vec<f64>,
}

fn panels(config: &RunConfig) -> Vec<Panel> {
    if config.is_cartpole() {
        vec![
            Panel {
                name: "reward",
                title: "Episode reward",
                y_label: "reward",
                stride: 1,
                extract: |m| m.episode_reward.clone(),
            },
            Panel {
                name: "reward_ma100",
                title: "Episode reward, moving average over 100 episodes",
                y_label: "reward",
                stride: 1,
                extract: |m| moving_average(&m.episode_reward, 100),
            },
        ]
    } else {
        vec![
            Panel {
                name: "loss",
                title: "Running average of the sampled Bellman error",
                y_label: "loss",
                stride: 1,
                extract: |m| running_average(&m.dqn_bellman_error),
            },
            Panel {
                name: "true_bellman_error",
                title: "True Bellman error",
                y_label: "error",
                stride: 1,
                extract: |m| m.true_bellman_error.clone(),
            },
            Panel {
                name: "hamming",
                title: "Hamming distance to the optimal policy",
                y_label: "distance",
                stride: 50,
                extract: |m| m.hamming_distance.iter().map(|&h| h as f64).collect(),
            },
        ]
    }
}

/// Trains all runs, then writes `aggregate_<panel>.csv` and `<panel>.svg`
/// with the across-seed mean and 95% confidence band per algorithm.
pub fn compare(config: &RunConfig, out: &Path, threads: Option<usize>, w: &mut dyn Write) -> Result<Vec<RunOutcome>> {
    if config.seeds.len() < 2 {
        bail!("compare needs at least two seeds");
    }
    let outcomes = train(config, out, threads, w)?;
    let x_label = if config.is_cartpole() { "episode" } else { "iteration" };
    for panel in panels(config) {
        let mut rows: Vec<AggregateRow> = Vec::new();
        let mut curves = Vec::new();
        for &alg in &config.algorithms {
            let data: Vec<Vec<f64>> = outcomes
                .iter()
                .filter(|o| o.algorithm == alg)
                .map(|o| (panel.extract)(&o.metrics))
                .collect();
            let stats = aggregate_series(&data, CiMethod::Normal)?;
            let alg_rows = aggregate_rows(alg.name(), &stats, panel.stride);
            if let Some(last) = alg_rows.last() {
                writeln!(
                    w,
                    "{:<20} {:<10} final mean {:.4} [{:.4}, {:.4}]",
                    panel.name, last.alg, last.mean, last.ci_low, last.ci_high
                )?;
            }
            curves.push(Curve {
                label: alg.name(),
                x: alg_rows.iter().map(|r| r.iter as f64).collect(),
                y: alg_rows.iter().map(|r| r.mean).collect(),
                band: Some((
                    alg_rows.iter().map(|r| r.ci_low).collect(),
                    alg_rows.iter().map(|r| r.ci_high).collect(),
                )),
            });
            rows.extend(alg_rows);
        }
        let csv = BufWriter::new(File::create(out.join(format!("aggregate_{}.csv", panel.name)))?);
        write_aggregate_csv(&rows, csv)?;
        let svg = line_plot(panel.title, x_label, panel.y_label, &curves);
        fs::write(out.join(format!("{}.svg", panel.name)), svg)?;
    }
    Ok(outcomes)
}

#[derive(Debug, Serialize)]
pub struct GradcheckSummary {
    pub network: Vec<(Activation, GradCheckReport)>,
    pub full_gradient: GradCheckReport,
    pub network_tolerance: f64,
    pub full_gradient_tolerance: f64,
    pub passed: bool,
}

/// Finite-difference checks of the network gradient (smooth activations)
/// and of the FG-DQN direction on deterministic transitions.
pub fn gradcheck(
    config: &RunConfig,
    probes: usize,
    network_tol: f64,
    full_tol: f64,
    w: &mut dyn Write,
) -> Result<GradcheckSummary> {
    let seed = config.seeds.first().copied().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoding = match config.environment {
        Environment::Forest { .. } => forest_encoding(&config.mdp()?),
        Environment::Cartpole { .. } => cartpole_encoding(),
    };

    let mut network = Vec::new();
    for act in [Activation::Sigmoid, Activation::Gelu] {
        let topology = MlpTopology::new(
            encoding.input_dim(),
            config.network.hidden_dims.clone(),
            encoding.output_dim(),
            act,
        );
        let mut report: Option<GradCheckReport> = None;
        for _ in 0..probes {
            let net = QNetwork::init(topology.clone(), &mut rng, fgdqn::qnet::InitScheme::UniformFanIn)?;
            let inputs = random_inputs(topology.input_dim, 1, 1.0, &mut rng);
            let r = check_network_gradient(&net, &inputs, DEFAULT_STEP, backprop_gradient)?;
            report = Some(merge(report, r));
        }
        let report = report.context("at least one probe is needed")?;
        writeln!(
            w,
            "network {:?}: max relative error {:.3e} over {} probes",
            act, report.max_rel_error, probes
        )?;
        network.push((act, report));
    }

    let spec = NetworkSpec::new(config.network.hidden_dims.clone(), Activation::Gelu);
    let full_gradient = match &config.environment {
        Environment::Forest { num_states, .. } => {
            let mdp = forest_build_mdp(&ForestParams {
                num_states: *num_states,
                fire_prob: 0.0,
                discount: config.discount,
            })?;
            full_gradient_probes(probes, config.discount, encoding, &spec, &mut rng, |rng| {
                let (x, u) = (rng.gen_range(0..mdp.num_states()), rng.gen_range(0..mdp.num_actions()));
                let y = (0..mdp.num_states())
                    .find(|&y| mdp.transition_row(x, u)[y] == 1.0)
                    .expect("deterministic kernel");
                Transition {
                    state: x,
                    action: u,
                    reward: mdp.reward(x, u),
                    next_state: y,
                    terminal: false,
                }
            })?
        }
        Environment::Cartpole { params } => {
            full_gradient_probes(probes, config.discount, encoding, &spec, &mut rng, |rng| {
                let s = cartpole_reset(rng);
                let action = rng.gen_range(0..2);
                let next = params.dynamics(s, action);
                Transition {
                    state: s,
                    action,
                    reward: 1.0,
                    next_state: next,
                    terminal: params.out_of_bounds(&next),
                }
            })?
        }
    };
    writeln!(
        w,
        "fgdqn direction: max relative error {:.3e} over {} probes ({} redrawn near ties)",
        full_gradient.max_rel_error, full_gradient.probes, full_gradient.skipped
    )?;

    let passed = network.iter().all(|(_, r)| r.passes(network_tol)) && full_gradient.passes(full_tol);
    let summary = GradcheckSummary {
        network,
        full_gradient,
        network_tolerance: network_tol,
        full_gradient_tolerance: full_tol,
        passed,
    };
    writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
    writeln!(w, "{}", if passed { "PASS" } else { "FAIL" })?;
    Ok(summary)
}

fn full_gradient_probes<S, F>(
    probes: usize,
    discount: f64,
    encoding: Encoding,
    spec: &NetworkSpec,
    rng: &mut ChaCha8Rng,
    mut draw: F,
) -> Result<GradCheckReport>
where
    S: fgdqn::state::State,
    F: FnMut(&mut ChaCha8Rng) -> Transition<S>,
{
    let mut report: Option<GradCheckReport> = None;
    let mut checked = 0;
    let mut skipped = 0;
    while checked < probes {
        if skipped > 100 * probes.max(1) {
            bail!("could not find probes away from action-value ties");
        }
        let model = spec.build(encoding, rng)?;
        let t = draw(rng);
        let r = check_full_gradient(&model, &[t], discount, DEFAULT_STEP, 1e-3, fgdqn_direction)?;
        checked += r.probes;
        skipped += r.skipped;
        report = Some(merge(report, r));
    }
    let mut report = report.context("at least one probe is needed")?;
    report.skipped = skipped;
    Ok(report)
}

fn merge(acc: Option<GradCheckReport>, r: GradCheckReport) -> GradCheckReport {
    let Some(mut acc) = acc else { return r };
    let base = acc.probes;
    acc.probes += r.probes;
    acc.skipped += r.skipped;
    acc.max_rel_error = acc.max_rel_error.max(r.max_rel_error);
    for (a, b) in acc.layers.iter_mut().zip(r.layers) {
        if b.worst.rel_error > a.worst.rel_error {
            a.worst = b.worst;
            a.worst.probe += base;
        }
    }
    acc
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Evaluation {
    Policy {
        policy: DeterministicPolicy,
        hamming_to_optimal: usize,
    },
    Rollouts {
        episodes: usize,
        mean_reward: f64,
        rewards: Vec<f64>,
    },
}

/// Greedy policy of a checkpoint on forest, or greedy rollouts on cartpole.
pub fn eval(config: &RunConfig, checkpoint: &Path, episodes: usize, w: &mut dyn Write) -> Result<Evaluation> {
    let text = fs::read_to_string(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let learner: Learner = serde_json::from_str(&text)?;
    let evaluation = match &config.environment {
        Environment::Forest { num_states, .. } => {
            let policy = match &learner {
                Learner::Tabular { table } => table.greedy_policy(),
                Learner::Network { model } => greedy_policy_of_net(model, *num_states)?,
            };
            let (optimal, _) = policy_iteration(&config.mdp()?)?;
            let hamming_to_optimal = hamming_distance(&policy, &optimal)?;
            Evaluation::Policy {
                policy,
                hamming_to_optimal,
            }
        }
        Environment::Cartpole { params } => {
            let model = learner.model().context("a cartpole checkpoint holds a network")?;
            let mut env = CartPole::new(*params)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.first().copied().unwrap_or(0));
            let mut rewards = Vec::with_capacity(episodes);
            for _ in 0..episodes {
                let mut s = env.reset(&mut rng);
                let mut total = 0.0;
                loop {
                    let step = env.step(model.argmax_action(&s)?.0)?;
                    total += step.reward;
                    if step.terminal {
                        break;
                    }
                    s = step.next_state;
                }
                rewards.push(total);
            }
            Evaluation::Rollouts {
                episodes,
                mean_reward: rewards.iter().sum::<f64>() / episodes.max(1) as f64,
                rewards,
            }
        }
    };
    writeln!(w, "{}", serde_json::to_string(&evaluation)?)?;
    Ok(evaluation)
}

/// Runs that stopped on non-finite parameters.
pub fn diverged(outcomes: &[RunOutcome]) -> Vec<(String, u64, u64)> {
    outcomes
        .iter()
        .filter_map(|o| {
            o.metrics
                .diverged_at
                .map(|n| (o.algorithm.name().to_string(), o.seed, n))
        })
        .collect()
}
