//! Finite-difference checks of the analytic gradients.
//!
//! Numerical derivatives use central differences through `forward` only,
//! so they share no code with backpropagation.

use rand::Rng;
use serde::Serialize;

use crate::qnet::{GradientVector, QModel, QNetwork};
use crate::replay::Transition;
use crate::state::State;
use crate::trainers::{compute_td_terms, TdMode};
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Below this magnitude differences are measured absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Coordinate {
    pub probe: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Worst coordinate within one layer's weights and bias.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: usize,
    pub worst: Coordinate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Probes left out because the loss is not differentiable there.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub layers: Vec<LayerReport>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    fn new(net: &QNetwork) -> Self {
        GradCheckReport {
            probes: 0,
            skipped: 0,
            max_rel_error: 0.0,
            layers: net
                .layer_ranges()
                .into_iter()
                .enumerate()
                .map(|(layer, range)| LayerReport {
                    layer,
                    worst: Coordinate {
                        index: range.start,
                        ..Coordinate::default()
                    },
                })
                .collect(),
        }
    }

    fn compare(&mut self, net: &QNetwork, probe: usize, analytic: &[f64], numeric: &[f64]) {
        for (layer, range) in net.layer_ranges().into_iter().enumerate() {
            for index in range {
                let rel_error = relative_error(analytic[index], numeric[index]);
                if rel_error > self.layers[layer].worst.rel_error {
                    self.layers[layer].worst = Coordinate {
                        probe,
                        index,
                        analytic: analytic[index],
                        numeric: numeric[index],
                        rel_error,
                    };
                }
                self.max_rel_error = self.max_rel_error.max(rel_error);
            }
        }
        self.probes += 1;
    }
}

/// Central-difference gradient of `f` at `params`.
pub fn numeric_gradient<F>(params: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p)?;
        p[i] = orig - h;
        let down = f(&p)?;
        p[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Checks `analytic(net, input, k)` against finite differences of output
/// `k` for every probe input and every output.
pub fn check_network_gradient<F>(net: &QNetwork, inputs: &[Vec<f64>], h: f64, analytic: F) -> Result<GradCheckReport>
where
    F: Fn(&QNetwork, &[f64], usize) -> Result<GradientVector>,
{
    let mut report = GradCheckReport::new(net);
    let mut scratch = net.clone();
    for (probe, input) in inputs.iter().enumerate() {
        for k in 0..net.topology().output_dim {
            let a = analytic(net, input, k)?;
            let n = numeric_gradient(net.params(), h, |p| {
                scratch.set_params(p)?;
                Ok(scratch.forward(input)?[k])
            })?;
            report.compare(net, probe, &a.0, &n);
        }
    }
    Ok(report)
}

/// The backpropagated gradient, as checked by default.
pub fn backprop_gradient(net: &QNetwork, input: &[f64], k: usize) -> Result<GradientVector> {
    net.grad_params(input, k)
}

/// `½δ²` with the bootstrap taken from the same network.
pub fn half_squared_td<S: State>(model: &QModel, t: &Transition<S>, discount: f64) -> Result<f64> {
    let boot = if t.terminal {
        0.0
    } else {
        model.argmax_action(&t.next_state)?.1
    };
    let delta = t.reward + discount * boot - model.q_value(&t.state, t.action)?;
    Ok(0.5 * delta * delta)
}

/// The FG-DQN descent direction for a single transition.
pub fn fgdqn_direction<S: State>(model: &QModel, t: &Transition<S>, discount: f64) -> Result<Vec<f64>> {
    Ok(compute_td_terms(model, None, t, discount, TdMode::FgDqn)?.full_gradient_direction())
}

/// Checks that `direction` equals `−∇(½δ²)` on each transition.
///
/// Transitions whose next state has its two best actions within `margin`
/// of each other sit near a kink of the max and are skipped.
pub fn check_full_gradient<S, F>(
    model: &QModel,
    transitions: &[Transition<S>],
    discount: f64,
    h: f64,
    margin: f64,
    direction: F,
) -> Result<GradCheckReport>
where
    S: State,
    F: Fn(&QModel, &Transition<S>, f64) -> Result<Vec<f64>>,
{
    let mut report = GradCheckReport::new(&model.net);
    let mut scratch = model.clone();
    for (probe, t) in transitions.iter().enumerate() {
        if !t.terminal && argmax_gap(model, &t.next_state)? <= margin {
            report.skipped += 1;
            continue;
        }
        let d = direction(model, t, discount)?;
        let n: Vec<f64> = numeric_gradient(model.params(), h, |p| {
            scratch.net.set_params(p)?;
            half_squared_td(&scratch, t, discount)
        })?
        .into_iter()
        .map(|g| -g)
        .collect();
        report.compare(&model.net, probe, &d, &n);
    }
    Ok(report)
}

/// Gap between the largest and second largest action value.
pub fn argmax_gap<S: State>(model: &QModel, s: &S) -> Result<f64> {
    let mut q = model.q_values(s)?;
    if q.len() < 2 {
        return Ok(f64::INFINITY);
    }
    q.sort_by(|a, b| b.total_cmp(a));
    Ok(q[0] - q[1])
}

/// Inputs drawn uniformly from `[−scale, scale]^dim`.
pub fn random_inputs<R: Rng + ?Sized>(dim: usize, count: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
        .collect()
}
