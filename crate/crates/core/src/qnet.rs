//! A fully connected Q-network with exact parameter gradients.
//!
//! Parameters live in one flat vector `θ ∈ R^d`; every update rule in
//! [`crate::trainers`] is an axpy on that vector. Layer `l` stores its
//! weights row-major (`fan_out × fan_in`) followed by its biases.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::argmax;
use crate::state::State;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative; ReLU takes the subgradient 0 at the kink.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = GELU_C * (z + GELU_A * z * z * z);
                let t = inner.tanh();
                let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * z * z);
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * d_inner
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTopology {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// Whether the output layer has a bias. Bias-free ReLU networks are
    /// positively homogeneous.
    #[serde(default = "default_true")]
    pub output_bias: bool,
    /// Squash the output into `(−b, b)` with a scaled sigmoid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_bound: Option<f64>,
}

impl MlpTopology {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Self {
        MlpTopology {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            output_bias: true,
            output_bound: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        if let Some(b) = self.output_bound {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::InvalidConfig("output bound must be positive".into()));
            }
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    /// `Σ (fan_in + 1)·fan_out`, less the output biases when disabled.
    pub fn num_params(&self) -> usize {
        build_layout(self).iter().map(|l| l.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: Option<usize>,
}

impl LayerLayout {
    fn len(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

fn build_layout(t: &MlpTopology) -> Vec<LayerLayout> {
    let dims = t.layer_dims();
    let last = dims.len() - 1;
    let mut offset = 0;
    dims.into_iter()
        .enumerate()
        .map(|(i, (fan_in, fan_out))| {
            let weights = offset;
            offset += fan_in * fan_out;
            let bias = if i < last || t.output_bias {
                let b = offset;
                offset += fan_out;
                Some(b)
            } else {
                None
            };
            LayerLayout {
                fan_in,
                fan_out,
                weights,
                bias,
            }
        })
        .collect()
}

/// Gradient of one network output with respect to the flat parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights uniform on `±1/√fan_in`, biases zero.
    #[default]
    UniformFanIn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct QNetwork {
    topology: MlpTopology,
    params: Vec<f64>,
    layout: Vec<LayerLayout>,
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    topology: MlpTopology,
    params: Vec<f64>,
}

impl TryFrom<RawNetwork> for QNetwork {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        QNetwork::from_params(raw.topology, raw.params)
    }
}

impl From<QNetwork> for RawNetwork {
    fn from(n: QNetwork) -> Self {
        RawNetwork {
            topology: n.topology,
            params: n.params,
        }
    }
}

/// Activations recorded by a forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `acts[0]` is the input, `acts[l]` the post-activation of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of every layer, output layer included.
    pre: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl ForwardTrace {
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

impl QNetwork {
    pub fn zeros(topology: MlpTopology) -> Result<Self> {
        topology.validate()?;
        let layout = build_layout(&topology);
        let d = layout.iter().map(LayerLayout::len).sum();
        Ok(QNetwork {
            topology,
            params: vec![0.0; d],
            layout,
        })
    }

    pub fn from_params(topology: MlpTopology, params: Vec<f64>) -> Result<Self> {
        let mut net = QNetwork::zeros(topology)?;
        net.set_params(&params)?;
        Ok(net)
    }

    /// Random initialisation.
    pub fn init<R: Rng + ?Sized>(topology: MlpTopology, rng: &mut R, scheme: InitScheme) -> Result<Self> {
        let mut net = QNetwork::zeros(topology)?;
        match scheme {
            InitScheme::UniformFanIn => {
                for layer in &net.layout {
                    let bound = 1.0 / (layer.fan_in as f64).sqrt();
                    let w = layer.weights..layer.weights + layer.fan_in * layer.fan_out;
                    for p in &mut net.params[w] {
                        *p = rng.gen_range(-bound..=bound);
                    }
                }
            }
        }
        Ok(net)
    }

    pub fn topology(&self) -> &MlpTopology {
        &self.topology
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Parameter index ranges, one per layer (weights and bias together).
    pub fn layer_ranges(&self) -> Vec<Range<usize>> {
        self.layout.iter().map(|l| l.weights..l.weights + l.len()).collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.outputs)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.topology.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.topology.input_dim,
                got: input.len(),
            });
        }
        let last = self.layout.len() - 1;
        let mut acts = Vec::with_capacity(self.layout.len());
        let mut pre = Vec::with_capacity(self.layout.len());
        acts.push(input.to_vec());
        for (l, layer) in self.layout.iter().enumerate() {
            let a = &acts[l];
            let w = &self.params[layer.weights..layer.weights + layer.fan_in * layer.fan_out];
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    let dot: f64 = row.iter().zip(a).map(|(wi, ai)| wi * ai).sum();
                    dot + layer.bias.map_or(0.0, |b| self.params[b + o])
                })
                .collect();
            if l < last {
                let act = self.topology.activation;
                acts.push(z.iter().map(|&v| act.apply(v)).collect());
            }
            pre.push(z);
        }
        let outputs = match self.topology.output_bound {
            None => pre[last].clone(),
            Some(b) => pre[last].iter().map(|&z| b * (2.0 * sigmoid(z) - 1.0)).collect(),
        };
        Ok(ForwardTrace { acts, pre, outputs })
    }

    /// Adds `scale · ∇_θ output[index]` to `grad`.
    pub fn accumulate_grad(&self, trace: &ForwardTrace, index: usize, scale: f64, grad: &mut [f64]) -> Result<()> {
        if index >= self.topology.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.topology.output_dim,
                got: index,
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let last = self.layout.len() - 1;
        let mut delta = vec![0.0; self.topology.output_dim];
        delta[index] = scale
            * match self.topology.output_bound {
                None => 1.0,
                Some(b) => {
                    let s = sigmoid(trace.pre[last][index]);
                    2.0 * b * s * (1.0 - s)
                }
            };

        for l in (0..=last).rev() {
            let layer = &self.layout[l];
            let a = &trace.acts[l];
            let w_range = layer.weights..layer.weights + layer.fan_in * layer.fan_out;
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[w_range.start + o * layer.fan_in..w_range.start + (o + 1) * layer.fan_in];
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += d * ai;
                }
                if let Some(b) = layer.bias {
                    grad[b + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[w_range];
            let act = self.topology.activation;
            let mut prev = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * d;
                }
            }
            for (p, &z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                *p *= act.derivative(z);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Exact gradient of `output[output_index]` with respect to `θ`.
    pub fn grad_params(&self, input: &[f64], output_index: usize) -> Result<GradientVector> {
        let trace = self.forward_trace(input)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_grad(&trace, output_index, 1.0, &mut grad)?;
        Ok(GradientVector(grad))
    }
}

/// How `(state, action)` pairs are presented to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// One-hot state concatenated with one-hot action; a single output.
    OneHotPair { num_states: usize, num_actions: usize },
    /// Raw state vector in, one output per action.
    StateVector { state_dim: usize, num_actions: usize },
}

impl Encoding {
    pub fn num_actions(&self) -> usize {
        match *self {
            Encoding::OneHotPair { num_actions, .. } | Encoding::StateVector { num_actions, .. } => num_actions,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Encoding::OneHotPair {
                num_states,
                num_actions,
            } => num_states + num_actions,
            Encoding::StateVector { state_dim, .. } => state_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            Encoding::OneHotPair { .. } => 1,
            Encoding::StateVector { num_actions, .. } => num_actions,
        }
    }

    pub fn topology(&self, hidden_dims: Vec<usize>, activation: Activation) -> MlpTopology {
        MlpTopology::new(self.input_dim(), hidden_dims, self.output_dim(), activation)
    }

    fn pair_input<S: State>(&self, s: &S, u: usize) -> Result<Vec<f64>> {
        let Encoding::OneHotPair {
            num_states,
            num_actions,
        } = *self
        else {
            unreachable!("pair_input on a state-vector encoding")
        };
        let x = s
            .index()
            .ok_or_else(|| Error::Unsupported("one-hot encoding needs discrete states".into()))?;
        if x >= num_states || u >= num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                got: x.max(u),
            });
        }
        let mut v = vec![0.0; num_states + num_actions];
        v[x] = 1.0;
        v[num_states + u] = 1.0;
        Ok(v)
    }

    fn state_input<S: State>(&self, s: &S) -> Result<Vec<f64>> {
        let f = s.features();
        if f.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: f.len(),
            });
        }
        Ok(f)
    }
}

/// Forward trace of a single `Q(s, u; θ)` evaluation.
#[derive(Clone, Debug)]
pub struct PairTrace {
    trace: ForwardTrace,
    index: usize,
}

impl PairTrace {
    pub fn value(&self) -> f64 {
        self.trace.outputs[self.index]
    }
}

/// A network together with the encoding that turns it into `Q(x, u; θ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QModel {
    pub encoding: Encoding,
    pub net: QNetwork,
}

impl QModel {
    pub fn new(encoding: Encoding, net: QNetwork) -> Result<Self> {
        let t = net.topology();
        if t.input_dim != encoding.input_dim() || t.output_dim != encoding.output_dim() {
            return Err(Error::InvalidConfig(format!(
                "network shape {}→{} does not fit encoding {}→{}",
                t.input_dim,
                t.output_dim,
                encoding.input_dim(),
                encoding.output_dim()
            )));
        }
        Ok(QModel { encoding, net })
    }

    pub fn num_actions(&self) -> usize {
        self.encoding.num_actions()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    /// `Q(s, u; θ)` for every action.
    pub fn q_values<S: State>(&self, s: &S) -> Result<Vec<f64>> {
        match self.encoding {
            Encoding::OneHotPair { num_actions, .. } => (0..num_actions)
                .map(|u| Ok(self.net.forward(&self.encoding.pair_input(s, u)?)?[0]))
                .collect(),
            Encoding::StateVector { .. } => self.net.forward(&self.encoding.state_input(s)?),
        }
    }

    pub fn q_value<S: State>(&self, s: &S, u: usize) -> Result<f64> {
        match self.encoding {
            Encoding::OneHotPair { .. } => Ok(self.net.forward(&self.encoding.pair_input(s, u)?)?[0]),
            Encoding::StateVector { num_actions, .. } => {
                if u >= num_actions {
                    return Err(Error::DimensionMismatch {
                        expected: num_actions,
                        got: u,
                    });
                }
                Ok(self.q_values(s)?[u])
            }
        }
    }

    /// Adds `scale · ∇_θ Q(s, u; θ)` to `grad` and returns `Q(s, u; θ)`.
    pub fn accumulate_grad<S: State>(&self, s: &S, u: usize, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let (trace, index) = match self.encoding {
            Encoding::OneHotPair { .. } => (self.net.forward_trace(&self.encoding.pair_input(s, u)?)?, 0),
            Encoding::StateVector { .. } => (self.net.forward_trace(&self.encoding.state_input(s)?)?, u),
        };
        self.net.accumulate_grad(&trace, index, scale, grad)?;
        Ok(trace.outputs()[index])
    }

    /// Forward pass for `Q(s, u; θ)`, kept for a later backward pass.
    pub fn trace<S: State>(&self, s: &S, u: usize) -> Result<PairTrace> {
        match self.encoding {
            Encoding::OneHotPair { .. } => Ok(PairTrace {
                trace: self.net.forward_trace(&self.encoding.pair_input(s, u)?)?,
                index: 0,
            }),
            Encoding::StateVector { num_actions, .. } => {
                if u >= num_actions {
                    return Err(Error::DimensionMismatch {
                        expected: num_actions,
                        got: u,
                    });
                }
                Ok(PairTrace {
                    trace: self.net.forward_trace(&self.encoding.state_input(s)?)?,
                    index: u,
                })
            }
        }
    }

    /// Greedy action at `s` with the trace of its Q-value.
    pub fn greedy_trace<S: State>(&self, s: &S) -> Result<(usize, PairTrace)> {
        match self.encoding {
            Encoding::OneHotPair { num_actions, .. } => {
                let mut best: Option<(usize, PairTrace)> = None;
                for u in 0..num_actions {
                    let t = self.trace(s, u)?;
                    if best.as_ref().map_or(true, |(_, b)| t.value() > b.value()) {
                        best = Some((u, t));
                    }
                }
                Ok(best.expect("at least one action"))
            }
            Encoding::StateVector { .. } => {
                let trace = self.net.forward_trace(&self.encoding.state_input(s)?)?;
                let (u, _) = argmax(trace.outputs());
                Ok((u, PairTrace { trace, index: u }))
            }
        }
    }

    /// Adds `scale · ∇_θ Q` at the traced pair to `grad`.
    pub fn backprop(&self, pt: &PairTrace, scale: f64, grad: &mut [f64]) -> Result<()> {
        self.net.accumulate_grad(&pt.trace, pt.index, scale, grad)
    }

    /// `(Q(s, u; θ), ∇_θ Q(s, u; θ))`
    pub fn value_and_grad<S: State>(&self, s: &S, u: usize) -> Result<(f64, GradientVector)> {
        let mut g = vec![0.0; self.num_params()];
        let q = self.accumulate_grad(s, u, 1.0, &mut g)?;
        Ok((q, GradientVector(g)))
    }

    /// Greedy action and its value; ties go to the lowest action index.
    pub fn argmax_action<S: State>(&self, s: &S) -> Result<(usize, f64)> {
        Ok(argmax(&self.q_values(s)?))
    }

    /// Greedy action restricted to `actions`, lowest index on ties.
    pub fn argmax_among<S: State>(&self, s: &S, actions: &[usize]) -> Result<(usize, f64)> {
        if actions.is_empty() {
            return Err(Error::InvalidConfig("empty action list".into()));
        }
        let q = self.q_values(s)?;
        let mut sorted = actions.to_vec();
        sorted.sort_unstable();
        let mut best = (sorted[0], f64::NEG_INFINITY);
        for &u in &sorted {
            let v = *q.get(u).ok_or(Error::DimensionMismatch {
                expected: q.len(),
                got: u,
            })?;
            if v > best.1 {
                best = (u, v);
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(MlpTopology::new(3, vec![5, 4], 2, Activation::Relu)).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let t = MlpTopology::new(3, vec![], 1, Activation::Relu);
        let net = QNetwork::from_params(t, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let y = net.forward(&[2.0, 1.0, -1.0]).unwrap()[0];
        assert_eq!(y, 0.5 * 2.0 - 1.0 * 1.0 + 2.0 * -1.0 + 0.25);

        let g = net.grad_params(&[2.0, 1.0, -1.0], 0).unwrap();
        assert_eq!(g.0, vec![2.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn param_count_matches_layout() {
        let t = MlpTopology::new(4, vec![16, 32, 32], 2, Activation::Relu);
        assert_eq!(t.num_params(), 5 * 16 + 17 * 32 + 33 * 32 + 33 * 2);
        let mut nb = t.clone();
        nb.output_bias = false;
        assert_eq!(nb.num_params(), t.num_params() - 2);
    }

    #[test]
    fn bias_free_relu_is_positively_homogeneous() {
        let mut t = MlpTopology::new(3, vec![8, 8], 2, Activation::Relu);
        t.output_bias = false;
        let net = QNetwork::init(t, &mut rng(), InitScheme::UniformFanIn).unwrap();
        let x = [0.3, -0.7, 1.1];
        let c = 2.5;
        let y = net.forward(&x).unwrap();
        let yc = net.forward(&x.map(|v| v * c)).unwrap();
        for (a, b) in y.iter().zip(&yc) {
            assert!((a * c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_respects_bounds_and_zero_biases() {
        let t = MlpTopology::new(10, vec![100], 3, Activation::Relu);
        let net = QNetwork::init(t.clone(), &mut rng(), InitScheme::UniformFanIn).unwrap();
        let again = QNetwork::init(t, &mut rng(), InitScheme::UniformFanIn).unwrap();
        assert_eq!(net, again);
        for layer in &net.layout {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let w = &net.params[layer.weights..layer.weights + layer.fan_in * layer.fan_out];
            assert!(w.iter().all(|v| v.abs() <= bound));
            let b = layer.bias.unwrap();
            assert!(net.params[b..b + layer.fan_out].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = QNetwork::zeros(MlpTopology::new(3, vec![2], 1, Activation::Relu)).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(net.grad_params(&[1.0, 2.0, 3.0], 1).is_err());
    }

    #[test]
    fn bounded_output_stays_inside_bound() {
        let mut t = MlpTopology::new(2, vec![8], 1, Activation::Sigmoid);
        t.output_bound = Some(3.0);
        let mut net = QNetwork::init(t, &mut rng(), InitScheme::UniformFanIn).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p *= 200.0);
        for x in [-100.0, -1.0, 0.0, 5.0, 1e3] {
            let y = net.forward(&[x, -x]).unwrap()[0];
            assert!(y.abs() <= 3.0);
        }
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let enc = Encoding::StateVector {
            state_dim: 1,
            num_actions: 2,
        };
        let t = enc.topology(vec![], Activation::Relu);
        // Q = (1.0, 3.0) for any input through the biases.
        let model = QModel::new(enc, QNetwork::from_params(t.clone(), vec![0.0, 0.0, 1.0, 3.0]).unwrap()).unwrap();
        let (u, q) = model.argmax_action(&0usize).unwrap();
        assert_eq!((u, q), (1, 3.0));
        assert_eq!(q, model.q_value(&0usize, u).unwrap());

        let tied = QModel::new(enc, QNetwork::from_params(t, vec![0.0, 0.0, 2.0, 2.0]).unwrap()).unwrap();
        assert_eq!(tied.argmax_action(&0usize).unwrap().0, 0);
        assert_eq!(tied.argmax_among(&0usize, &[1, 0]).unwrap().0, 0);
        assert!(tied.argmax_among(&0usize, &[]).is_err());
    }

    #[test]
    fn one_hot_encoding_requires_discrete_states() {
        use crate::envs::CartPoleState;
        let enc = Encoding::OneHotPair {
            num_states: 3,
            num_actions: 2,
        };
        let model = QModel::new(enc, QNetwork::zeros(enc.topology(vec![4], Activation::Relu)).unwrap()).unwrap();
        assert!(model.q_values(&CartPoleState::default()).is_err());
        assert!(model.q_values(&5usize).is_err());
        assert_eq!(model.q_values(&2usize).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn checkpoint_json_round_trip() {
        let enc = Encoding::StateVector {
            state_dim: 4,
            num_actions: 2,
        };
        let net = QNetwork::init(
            enc.topology(vec![16, 32, 32], Activation::Relu),
            &mut rng(),
            InitScheme::UniformFanIn,
        )
        .unwrap();
        let model = QModel::new(enc, net).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: QModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["net"]["params"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<QModel>(v).is_err());
    }
}
