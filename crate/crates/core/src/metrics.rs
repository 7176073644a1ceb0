//! Bellman errors, policy distances, reward curves and multi-seed
//! aggregation, plus their CSV/JSON serialisation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::mdp::{DeterministicPolicy, QTable, TabularMdp};
use crate::qnet::QModel;
use crate::replay::Transition;
use crate::state::State;
use crate::{Error, Result};

/// Time series recorded by one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config_hash: String,
    /// Sampled Bellman error of the minibatch, per iteration.
    pub dqn_bellman_error: Vec<f64>,
    /// Exact Bellman error, per iteration (tabular environments only).
    pub true_bellman_error: Vec<f64>,
    /// Distance to the reference policy, per iteration.
    pub hamming_distance: Vec<usize>,
    pub episode_reward: Vec<f64>,
    pub episode_length: Vec<usize>,
    pub episode_discounted_return: Vec<f64>,
    /// Iteration at which the parameters became non-finite.
    pub diverged_at: Option<u64>,
}

impl RunMetrics {
    pub fn new(seed: u64) -> Self {
        RunMetrics {
            seed,
            ..RunMetrics::default()
        }
    }

    pub fn iterations(&self) -> usize {
        self.dqn_bellman_error.len()
    }

    pub fn episodes(&self) -> usize {
        self.episode_reward.len()
    }

    /// Checks that every optional series is either absent or full-length.
    pub fn is_consistent(&self) -> bool {
        let n = self.iterations();
        let e = self.episodes();
        (self.true_bellman_error.is_empty() || self.true_bellman_error.len() == n)
            && (self.hamming_distance.is_empty() || self.hamming_distance.len() == n)
            && self.episode_length.len() == e
            && (self.episode_discounted_return.is_empty() || self.episode_discounted_return.len() == e)
    }

    /// Writes one CSV row per iteration.
    pub fn write_iteration_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "dqn_bellman_error", "true_bellman_error", "hamming_distance"])?;
        for i in 0..self.iterations() {
            w.write_record([
                i.to_string(),
                self.dqn_bellman_error[i].to_string(),
                opt_cell(self.true_bellman_error.get(i)),
                opt_cell(self.hamming_distance.get(i)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one CSV row per episode.
    pub fn write_episode_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "episode",
            "episode_reward",
            "episode_length",
            "episode_discounted_return",
        ])?;
        for i in 0..self.episodes() {
            w.write_record([
                i.to_string(),
                self.episode_reward[i].to_string(),
                self.episode_length[i].to_string(),
                opt_cell(self.episode_discounted_return.get(i)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn opt_cell<T: ToString>(v: Option<&T>) -> String {
    v.map_or_else(String::new, ToString::to_string)
}

/// Mean over the batch of `(Z − Q(X,U;θ))²` with
/// `Z = r + γ max_v Q(X′,v;θ)` (or `Z = r` on terminal transitions).
pub fn dqn_bellman_error<S: State>(model: &QModel, batch: &[&Transition<S>], discount: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        let boot = if t.terminal {
            0.0
        } else {
            model.argmax_action(&t.next_state)?.1
        };
        let err = t.reward + discount * boot - model.q_value(&t.state, t.action)?;
        total += err * err;
    }
    Ok(total / batch.len() as f64)
}

/// Q-values of a network on every `(x, u)` of a finite state space.
pub fn q_table_of(model: &QModel, num_states: usize) -> Result<QTable> {
    let values = (0..num_states).map(|x| model.q_values(&x)).collect::<Result<_>>()?;
    Ok(QTable { values })
}

fn check_weights(mdp: &TabularMdp, mu: &[Vec<f64>]) -> Result<()> {
    if mu.len() != mdp.num_states() || mu.iter().any(|r| r.len() != mdp.num_actions()) {
        return Err(Error::NotADistribution("weights have the wrong shape".into()));
    }
    if mu.iter().flatten().any(|&w| !(w >= 0.0)) {
        return Err(Error::NotADistribution("negative weight".into()));
    }
    let total: f64 = mu.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Uniform weights over all `(x, u)` pairs.
pub fn uniform_weights(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    let w = 1.0 / (mdp.num_states() * mdp.num_actions()) as f64;
    vec![vec![w; mdp.num_actions()]; mdp.num_states()]
}

/// `Σ μ(x,u) (r(x,u) + γ Σ_y p(y|x,u) max_v Q(y,v) − Q(x,u))²` for a table.
pub fn true_bellman_error_table(q: &QTable, mdp: &TabularMdp, mu: &[Vec<f64>]) -> Result<f64> {
    check_weights(mdp, mu)?;
    if q.num_states() != mdp.num_states() || q.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states() * mdp.num_actions(),
            got: q.num_states() * q.num_actions(),
        });
    }
    let v = q.max_values();
    let mut total = 0.0;
    for x in 0..mdp.num_states() {
        for u in 0..mdp.num_actions() {
            let err = mdp.backup(x, u, &v) - q.get(x, u);
            total += mu[x][u] * err * err;
        }
    }
    Ok(total)
}

/// True Bellman error of a network on a finite MDP.
pub fn true_bellman_error(model: &QModel, mdp: &TabularMdp, mu: &[Vec<f64>]) -> Result<f64> {
    true_bellman_error_table(&q_table_of(model, mdp.num_states())?, mdp, mu)
}

/// Number of states where the two policies choose differently.
pub fn hamming_distance(a: &DeterministicPolicy, b: &DeterministicPolicy) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.actions.iter().zip(&b.actions).filter(|(x, y)| x != y).count())
}

/// Greedy policy of a network over states `0..num_states`.
pub fn greedy_policy_of_net(model: &QModel, num_states: usize) -> Result<DeterministicPolicy> {
    Ok(q_table_of(model, num_states)?.greedy_policy())
}

/// Trailing mean over the last `min(window, i + 1)` entries.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            series[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Mean of the series up to and including each index.
pub fn running_average(series: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    series
        .iter()
        .enumerate()
        .map(|(i, v)| {
            total += v;
            total / (i + 1) as f64
        })
        .collect()
}

/// Every `stride`-th entry, starting with the first.
pub fn hamming_subsample<T: Clone>(series: &[T], stride: usize) -> Vec<T> {
    series.iter().step_by(stride.max(1)).cloned().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `1.96·sd/√n`
    #[default]
    Normal,
    /// Student-t quantile with `n − 1` degrees of freedom.
    StudentT,
}

/// Pointwise statistics across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub num_runs: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation (`n − 1` denominator).
    pub sd: Vec<f64>,
    pub ci_half_width: Vec<f64>,
}

impl AggregateStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn ci_low(&self, i: usize) -> f64 {
        self.mean[i] - self.ci_half_width[i]
    }

    pub fn ci_high(&self, i: usize) -> f64 {
        self.mean[i] + self.ci_half_width[i]
    }
}

/// Aggregates aligned series, truncating to the shortest.
pub fn aggregate_series(runs: &[Vec<f64>], method: CiMethod) -> Result<AggregateStats> {
    if runs.len() < 2 {
        return Err(Error::TooFewRuns {
            needed: 2,
            got: runs.len(),
        });
    }
    let n = runs.len() as f64;
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let quantile = match method {
        CiMethod::Normal => 1.96,
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, n - 1.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975),
    };
    let mut mean = Vec::with_capacity(len);
    let mut sd = Vec::with_capacity(len);
    let mut half = Vec::with_capacity(len);
    for i in 0..len {
        let m = runs.iter().map(|r| r[i]).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
        let s = var.sqrt();
        mean.push(m);
        sd.push(s);
        half.push(quantile * s / n.sqrt());
    }
    Ok(AggregateStats {
        num_runs: runs.len(),
        mean,
        sd,
        ci_half_width: half,
    })
}

/// Which series of a [`RunMetrics`] to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    DqnBellmanError,
    TrueBellmanError,
    HammingDistance,
    EpisodeReward,
    EpisodeLength,
    EpisodeDiscountedReturn,
}

impl Series {
    pub fn extract(self, m: &RunMetrics) -> Vec<f64> {
        match self {
            Series::DqnBellmanError => m.dqn_bellman_error.clone(),
            Series::TrueBellmanError => m.true_bellman_error.clone(),
            Series::HammingDistance => m.hamming_distance.iter().map(|&h| h as f64).collect(),
            Series::EpisodeReward => m.episode_reward.clone(),
            Series::EpisodeLength => m.episode_length.iter().map(|&l| l as f64).collect(),
            Series::EpisodeDiscountedReturn => m.episode_discounted_return.clone(),
        }
    }
}

/// Aggregates one series across runs.
pub fn aggregate_runs(runs: &[RunMetrics], series: Series, method: CiMethod) -> Result<AggregateStats> {
    let data: Vec<Vec<f64>> = runs.iter().map(|r| series.extract(r)).collect();
    aggregate_series(&data, method)
}

/// Row of the comparison CSV: `iter, alg, mean, ci_low, ci_high`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iter: usize,
    pub alg: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Rows for one algorithm, keeping every `stride`-th index.
pub fn aggregate_rows(alg: &str, stats: &AggregateStats, stride: usize) -> Vec<AggregateRow> {
    (0..stats.len())
        .step_by(stride.max(1))
        .map(|i| AggregateRow {
            iter: i,
            alg: alg.to_string(),
            mean: stats.mean[i],
            ci_low: stats.ci_low(i),
            ci_high: stats.ci_high(i),
        })
        .collect()
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iter", "alg", "mean", "ci_low", "ci_high"])?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.alg.clone(),
            r.mean.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{forest_build_mdp, ForestParams};

    #[test]
    fn zero_q_on_terminal_reward_three() {
        use crate::qnet::{Activation, Encoding, QNetwork};
        let enc = Encoding::OneHotPair {
            num_states: 2,
            num_actions: 2,
        };
        let model = QModel::new(enc, QNetwork::zeros(enc.topology(vec![3], Activation::Relu)).unwrap()).unwrap();
        let t = Transition {
            state: 0usize,
            action: 1,
            reward: 3.0,
            next_state: 1,
            terminal: true,
        };
        assert_eq!(dqn_bellman_error(&model, &[&t], 0.9).unwrap(), 9.0);
        assert!(dqn_bellman_error::<usize>(&model, &[], 0.9).is_err());
        assert_eq!(greedy_policy_of_net(&model, 2).unwrap().actions, vec![0, 0]);
    }

    #[test]
    fn zero_table_true_error_is_reward_energy() {
        let mdp = forest_build_mdp(&ForestParams::new(0.05, 0.8)).unwrap();
        let q = QTable::zeros(10, 2);
        let e = true_bellman_error_table(&q, &mdp, &uniform_weights(&mdp)).unwrap();
        assert!((e - 14.25).abs() < 1e-12);
    }

    #[test]
    fn weights_must_be_a_distribution() {
        let mdp = forest_build_mdp(&ForestParams::new(0.05, 0.8)).unwrap();
        let q = QTable::zeros(10, 2);
        let mut mu = uniform_weights(&mdp);
        mu[0][0] += 0.1;
        assert!(matches!(
            true_bellman_error_table(&q, &mdp, &mu),
            Err(Error::NotADistribution(_))
        ));
    }

    #[test]
    fn hamming_examples() {
        let opt = DeterministicPolicy::new(vec![0, 0, 1, 1, 1, 1, 1, 1, 1, 1]);
        let myopic = DeterministicPolicy::new(vec![0, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(hamming_distance(&opt, &opt).unwrap(), 0);
        assert_eq!(hamming_distance(&opt, &myopic).unwrap(), 1);
        let zeros = DeterministicPolicy::constant(10, 0);
        let ones = DeterministicPolicy::constant(10, 1);
        assert_eq!(hamming_distance(&zeros, &ones).unwrap(), 10);
        assert!(hamming_distance(&zeros, &DeterministicPolicy::constant(3, 0)).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[0.0, 200.0], 2), vec![0.0, 100.0]);
        let s = [1.0, 4.0, -2.0, 7.5];
        assert_eq!(moving_average(&s, 1), s.to_vec());
        assert!(moving_average(&[3.0; 500], 100).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn running_average_is_the_prefix_mean() {
        assert_eq!(running_average(&[2.0, 4.0, 0.0, 6.0]), vec![2.0, 3.0, 2.0, 3.0]);
        assert!(running_average(&[]).is_empty());
    }

    #[test]
    fn moving_average_matches_direct_window() {
        let s: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let ma = moving_average(&s, 100);
        for i in [0usize, 5, 99, 100, 573, 999] {
            let lo = (i + 1).saturating_sub(100);
            let direct = s[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
            assert!((ma[i] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn subsample_lengths() {
        let s: Vec<usize> = (0..101).collect();
        assert_eq!(hamming_subsample(&s, 1), s);
        assert_eq!(hamming_subsample(&s, 50), vec![0, 50, 100]);
        for len in 0..120 {
            let v: Vec<usize> = (0..len).collect();
            assert_eq!(hamming_subsample(&v, 50).len(), len.div_ceil(50));
        }
    }

    #[test]
    fn aggregate_closed_form() {
        let stats = aggregate_series(&[vec![0.0, 5.0], vec![2.0, 5.0]], CiMethod::Normal).unwrap();
        assert_eq!(stats.mean, vec![1.0, 5.0]);
        assert!((stats.sd[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((stats.ci_half_width[0] - 1.96).abs() < 1e-12);
        assert_eq!(stats.sd[1], 0.0);
        assert_eq!(stats.ci_half_width[1], 0.0);

        let t = aggregate_series(&[vec![0.0], vec![2.0]], CiMethod::StudentT).unwrap();
        // t_{0.975, 1} = 12.706...
        assert!((t.ci_half_width[0] - 12.7062).abs() < 1e-3);
    }

    #[test]
    fn aggregate_truncates_and_needs_two_runs() {
        assert!(matches!(
            aggregate_series(&[vec![1.0]], CiMethod::Normal),
            Err(Error::TooFewRuns { .. })
        ));
        let s = aggregate_series(&[vec![1.0, 2.0, 3.0], vec![1.0]], CiMethod::Normal).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn aggregate_ignores_run_order() {
        let runs = vec![vec![1.0, 2.0], vec![4.0, -1.0], vec![0.5, 0.25]];
        let a = aggregate_series(&runs, CiMethod::Normal).unwrap();
        let rev: Vec<Vec<f64>> = runs.iter().rev().cloned().collect();
        let b = aggregate_series(&rev, CiMethod::Normal).unwrap();
        for i in 0..2 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-15);
            assert!((a.sd[i] - b.sd[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_metrics_write_header_only() {
        let m = RunMetrics::new(3);
        let mut out = Vec::new();
        m.write_iteration_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iter,dqn_bellman_error,true_bellman_error,hamming_distance\n"
        );
        assert!(m.is_consistent());
    }

    #[test]
    fn aggregate_csv_schema() {
        let stats = aggregate_series(&[vec![0.0, 1.0], vec![2.0, 3.0]], CiMethod::Normal).unwrap();
        let rows = aggregate_rows("fgdqn", &stats, 1);
        let mut out = Vec::new();
        write_aggregate_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iter,alg,mean,ci_low,ci_high\n0,fgdqn,1,"));
    }
}
