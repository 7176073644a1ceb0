//! Finite discounted MDPs and exact dynamic-programming solvers.
//!
//! Every learning algorithm in this crate is judged against the objects
//! produced here: the optimal value function, the optimal Q-table and the
//! optimal deterministic policy. Solvers are pure functions of their inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default convergence tolerance for the oracles.
pub const ORACLE_TOL: f64 = 1e-10;

/// Row sums of the transition kernel must be within this of one.
const STOCHASTIC_TOL: f64 = 1e-12;

/// Above this many states policy evaluation iterates instead of solving.
const DIRECT_SOLVE_MAX_STATES: usize = 1000;

/// Relative slack under which two Q-values count as tied during policy
/// improvement.
const TIE_TOL: f64 = 1e-10;

/// A finite MDP with kernel `p[x][u][y]`, reward `r[x][u]` and discount `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    discount: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    discount: f64,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        TabularMdp::new(
            raw.num_states,
            raw.num_actions,
            raw.transition,
            raw.reward,
            raw.discount,
        )
    }
}

impl From<TabularMdp> for RawMdp {
    fn from(m: TabularMdp) -> Self {
        RawMdp {
            num_states: m.num_states,
            num_actions: m.num_actions,
            transition: m.transition,
            reward: m.reward,
            discount: m.discount,
        }
    }
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let mdp = TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks shapes, row-stochasticity and the discount range.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidMdp(msg));
        if self.num_states == 0 || self.num_actions == 0 {
            return bad("state and action spaces must be non-empty".into());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            // γ = 0 is accepted as a degenerate but useful case.
            if self.discount != 0.0 {
                return bad(format!("discount {} outside [0, 1)", self.discount));
            }
        }
        if self.transition.len() != self.num_states || self.reward.len() != self.num_states {
            return bad("kernel/reward row count differs from num_states".into());
        }
        for x in 0..self.num_states {
            if self.transition[x].len() != self.num_actions || self.reward[x].len() != self.num_actions {
                return bad(format!("state {x}: wrong number of actions"));
            }
            for u in 0..self.num_actions {
                let row = &self.transition[x][u];
                if row.len() != self.num_states {
                    return bad(format!("p(.|{x},{u}) has length {}", row.len()));
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return bad(format!("p(.|{x},{u}) has a negative or non-finite entry"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return bad(format!("p(.|{x},{u}) sums to {total}"));
                }
                if !self.reward[x][u].is_finite() {
                    return bad(format!("r({x},{u}) is not finite"));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self, x: usize, u: usize) -> f64 {
        self.reward[x][u]
    }

    /// The next-state distribution `p(·|x,u)`.
    pub fn transition_row(&self, x: usize, u: usize) -> &[f64] {
        &self.transition[x][u]
    }

    pub fn transition(&self) -> &[Vec<Vec<f64>>] {
        &self.transition
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.reward
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let mut m = self.clone();
        m.discount = discount;
        m.validate()?;
        Ok(m)
    }

    /// `r(x,u) + γ Σ_y p(y|x,u) V(y)`
    pub fn backup(&self, x: usize, u: usize, v: &[f64]) -> f64 {
        let expected: f64 = self.transition[x][u].iter().zip(v).map(|(p, vy)| p * vy).sum();
        self.reward[x][u] + self.discount * expected
    }

    /// Bellman optimality operator `F(V)(x) = max_u [r + γ Σ p V]`.
    pub fn bellman_optimality(&self, v: &[f64]) -> Vec<f64> {
        (0..self.num_states)
            .map(|x| {
                (0..self.num_actions)
                    .map(|u| self.backup(x, u, v))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Q-values induced by a state-value function.
    pub fn q_from_values(&self, v: &[f64]) -> QTable {
        let values = (0..self.num_states)
            .map(|x| (0..self.num_actions).map(|u| self.backup(x, u, v)).collect())
            .collect();
        QTable { values }
    }

    /// Q dynamic-programming operator `(GQ)(x,u) = r + γ Σ_y p max_v Q(y,v)`.
    pub fn q_bellman(&self, q: &QTable) -> QTable {
        self.q_from_values(&q.max_values())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tabular Q-values, indexed `values[x][u]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            values: vec![vec![0.0; num_actions]; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn num_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.values[x][u]
    }

    pub fn max_values(&self) -> Vec<f64> {
        self.values.iter().map(|row| argmax(row).1).collect()
    }

    /// Greedy policy, lowest action index on ties.
    pub fn greedy_policy(&self) -> DeterministicPolicy {
        DeterministicPolicy {
            actions: self.values.iter().map(|row| argmax(row).0).collect(),
        }
    }

    /// Sup-norm distance between two tables of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// First index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A stationary deterministic policy `v: S → A`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeterministicPolicy {
    pub actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        DeterministicPolicy { actions }
    }

    pub fn constant(num_states: usize, action: usize) -> Self {
        DeterministicPolicy {
            actions: vec![action; num_states],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A stationary randomized policy `φ(u|x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomizedPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl RandomizedPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (x, row) in probs.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("negative probability in row {x}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {x} sums to {total}")));
            }
        }
        Ok(RandomizedPolicy { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        RandomizedPolicy {
            probs: vec![vec![1.0 / num_actions as f64; num_actions]; num_states],
        }
    }
}

impl From<&DeterministicPolicy> for RandomizedPolicy {
    fn from(p: &DeterministicPolicy) -> Self {
        let num_actions = p.actions.iter().copied().max().map_or(1, |m| m + 1);
        let probs = p
            .actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        RandomizedPolicy { probs }
    }
}

/// Anything that assigns action probabilities per state.
pub trait StationaryPolicy {
    fn num_states(&self) -> usize;
    fn prob(&self, x: usize, u: usize) -> f64;
}

impl StationaryPolicy for DeterministicPolicy {
    fn num_states(&self) -> usize {
        self.actions.len()
    }

    fn prob(&self, x: usize, u: usize) -> f64 {
        if self.actions[x] == u {
            1.0
        } else {
            0.0
        }
    }
}

impl StationaryPolicy for RandomizedPolicy {
    fn num_states(&self) -> usize {
        self.probs.len()
    }

    fn prob(&self, x: usize, u: usize) -> f64 {
        self.probs[x].get(u).copied().unwrap_or(0.0)
    }
}

fn check_policy<P: StationaryPolicy>(mdp: &TabularMdp, policy: &P) -> Result<()> {
    if policy.num_states() != mdp.num_states {
        return Err(Error::InvalidPolicy(format!(
            "policy covers {} states, mdp has {}",
            policy.num_states(),
            mdp.num_states
        )));
    }
    for x in 0..mdp.num_states {
        let total: f64 = (0..mdp.num_actions).map(|u| policy.prob(x, u)).sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidPolicy(format!(
                "state {x}: action probabilities over valid actions sum to {total}"
            )));
        }
    }
    Ok(())
}

/// Value iteration from `V₀ = 0`.
///
/// Stops once `γ‖V_{k+1} − V_k‖_∞ ≤ tol`, which bounds the Bellman residual
/// of the returned iterate by `tol`. The iteration count equals `max_iters`
/// when the cap was hit first.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<(ValueFunction, usize)> {
    mdp.validate()?;
    check_tol(tol, max_iters)?;
    let mut v = vec![0.0; mdp.num_states];
    for k in 1..=max_iters {
        let next = mdp.bellman_optimality(&v);
        let step = sup_distance(&next, &v);
        v = next;
        if mdp.discount * step <= tol {
            return Ok((ValueFunction { values: v }, k));
        }
    }
    Ok((ValueFunction { values: v }, max_iters))
}

/// Q-value iteration from `Q₀ = 0`, same stopping rule as [`value_iteration`].
pub fn q_value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<QTable> {
    mdp.validate()?;
    check_tol(tol, max_iters)?;
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    for _ in 0..max_iters {
        let next = mdp.q_bellman(&q);
        let step = next.sup_distance(&q);
        q = next;
        if mdp.discount * step <= tol {
            break;
        }
    }
    Ok(q)
}

fn check_tol(tol: f64, max_iters: usize) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be positive".into()));
    }
    Ok(())
}

/// Exact value of a stationary policy.
///
/// Uses a dense LU solve of `(I − γP_π)V = r_π` for up to 1000 states,
/// otherwise fixed-point iteration to `1e-10`.
pub fn policy_evaluation<P: StationaryPolicy>(mdp: &TabularMdp, policy: &P) -> Result<ValueFunction> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let s = mdp.num_states;
    let (p_pi, r_pi) = policy_kernel(mdp, policy);

    if s <= DIRECT_SOLVE_MAX_STATES {
        let mut a = DMatrix::<f64>::identity(s, s);
        for x in 0..s {
            for y in 0..s {
                a[(x, y)] -= mdp.discount * p_pi[x][y];
            }
        }
        let b = DVector::from_vec(r_pi);
        let v = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidMdp("singular policy-evaluation system".into()))?;
        return Ok(ValueFunction {
            values: v.iter().copied().collect(),
        });
    }

    let mut v = vec![0.0; s];
    loop {
        let next: Vec<f64> = (0..s)
            .map(|x| r_pi[x] + mdp.discount * p_pi[x].iter().zip(&v).map(|(p, w)| p * w).sum::<f64>())
            .collect();
        let step = sup_distance(&next, &v);
        v = next;
        if mdp.discount * step <= ORACLE_TOL * (1.0 - mdp.discount) {
            return Ok(ValueFunction { values: v });
        }
    }
}

/// State-to-state kernel and expected reward under a policy.
fn policy_kernel<P: StationaryPolicy>(mdp: &TabularMdp, policy: &P) -> (Vec<Vec<f64>>, Vec<f64>) {
    let s = mdp.num_states;
    let mut p_pi = vec![vec![0.0; s]; s];
    let mut r_pi = vec![0.0; s];
    for x in 0..s {
        for u in 0..mdp.num_actions {
            let w = policy.prob(x, u);
            if w == 0.0 {
                continue;
            }
            r_pi[x] += w * mdp.reward[x][u];
            for (y, p) in mdp.transition[x][u].iter().enumerate() {
                p_pi[x][y] += w * p;
            }
        }
    }
    (p_pi, r_pi)
}

/// Howard policy iteration.
///
/// Starts from the myopic policy and stops when an improvement sweep leaves
/// the policy unchanged. Among actions whose backed-up value is within a
/// relative `1e-10` of the best, the lowest index is chosen, so the result
/// is the lowest-index optimal policy.
pub fn policy_iteration(mdp: &TabularMdp) -> Result<(DeterministicPolicy, ValueFunction)> {
    mdp.validate()?;
    let zero = vec![0.0; mdp.num_states];
    let mut policy = improve(mdp, &zero);
    // Finite termination is guaranteed; the cap only guards against
    // pathological floating-point cycling.
    let cap = 10_000;
    for _ in 0..cap {
        let v = policy_evaluation(mdp, &policy)?;
        let next = improve(mdp, &v.values);
        if next == policy {
            return Ok((policy, v));
        }
        policy = next;
    }
    Err(Error::NonConvergence {
        residual: f64::NAN,
        iterations: cap,
    })
}

fn improve(mdp: &TabularMdp, v: &[f64]) -> DeterministicPolicy {
    let actions = (0..mdp.num_states)
        .map(|x| {
            let q: Vec<f64> = (0..mdp.num_actions).map(|u| mdp.backup(x, u, v)).collect();
            let best = argmax(&q).1;
            let slack = TIE_TOL * best.abs().max(1.0);
            q.iter().position(|&qu| qu >= best - slack).unwrap_or(0)
        })
        .collect();
    DeterministicPolicy { actions }
}

/// Stationary law `μ(x,u) = ν(x)φ(u|x)` of the policy-induced chain.
///
/// `ν` is found by power iteration on the lazy chain `½(I + P_φ)`, which has
/// the same invariant law and is aperiodic. Converges to an L1 step of
/// `1e-12` or reports the residual.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &RandomizedPolicy) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let s = mdp.num_states;
    let (p_pi, _) = policy_kernel(mdp, policy);

    const MAX_ITERS: usize = 1_000_000;
    let mut nu = vec![1.0 / s as f64; s];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let mut next = vec![0.0; s];
        for x in 0..s {
            let half = 0.5 * nu[x];
            next[x] += half;
            for (y, p) in p_pi[x].iter().enumerate() {
                next[y] += half * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|w| *w /= total);
        residual = next.iter().zip(&nu).map(|(a, b)| (a - b).abs()).sum();
        nu = next;
        if residual <= 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            residual,
            iterations: MAX_ITERS,
        });
    }
    Ok((0..s)
        .map(|x| (0..mdp.num_actions).map(|u| nu[x] * policy.prob(x, u)).collect())
        .collect())
}
