//! Fully connected networks with explicit forward caches and backward passes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => super::sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            2 => Ok(Activation::Sigmoid),
            3 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Affine layer `y = act(W x + b)` with `W` stored `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// He-style normal initialization, zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| {
                let n: f64 = StandardNormal.sample(rng);
                n * std
            })
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, input: &Tensor) -> Tensor {
        let batch = input.rows();
        let mut out = vec![0.0; batch * self.outputs];
        for b in 0..batch {
            let x = input.row(b);
            let y = &mut out[b * self.outputs..(b + 1) * self.outputs];
            for (o, slot) in y.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
                *slot = self.activation.apply(acc);
            }
        }
        Tensor::matrix(batch, self.outputs, out).expect("dense output shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients with exactly the network's layer shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradient>,
}

impl MlpGradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Appends gradients in the same order as [`MlpNetwork::write_params`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0))
    }
}

/// Per-layer activations recorded by [`MlpNetwork::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor>,
}

impl ForwardCache {
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(shape_err("layer parameter buffers do not match its dimensions"));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(shape_err(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random network over `widths` (`widths[0]` is the input width). Hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::random(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != 2 || input.cols() != self.input_width() {
            return Err(shape_err(format!(
                "network expects batch x {}, got {:?}",
                self.input_width(),
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("non-empty"));
            activations.push(next);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut h = self.layers[0].forward(input);
        for layer in &self.layers[1..] {
            h = layer.forward(&h);
        }
        Ok(h)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<(MlpGradients, Tensor)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(shape_err("forward cache does not belong to this network"));
        }
        let batch = cache.input().rows();
        if output_grad.shape() != [batch, self.output_width()] {
            return Err(shape_err(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.shape(),
                cache.output().shape()
            )));
        }
        for (layer, act) in self.layers.iter().zip(&cache.activations[1..]) {
            if act.cols() != layer.outputs || act.rows() != batch {
                return Err(shape_err("forward cache does not belong to this network"));
            }
        }

        let mut grads = MlpGradients::zeros_like(self);
        let mut upstream = output_grad.data().to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            let (nin, nout) = (layer.inputs, layer.outputs);
            // upstream becomes the gradient w.r.t. the pre-activation
            for (g, &y) in upstream.iter_mut().zip(output.data()) {
                *g *= layer.activation.derivative_from_output(y);
            }
            let lg = &mut grads.layers[li];
            let mut downstream = vec![0.0; batch * nin];
            for b in 0..batch {
                let x = input.row(b);
                let dz = &upstream[b * nout..(b + 1) * nout];
                let dx = &mut downstream[b * nin..(b + 1) * nin];
                for (o, &g) in dz.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    lg.bias[o] += g;
                    let wrow = &layer.weights[o * nin..(o + 1) * nin];
                    let grow = &mut lg.weights[o * nin..(o + 1) * nin];
                    for i in 0..nin {
                        grow[i] += g * x[i];
                        dx[i] += g * wrow[i];
                    }
                }
            }
            upstream = downstream;
        }
        let input_grad = Tensor::matrix(batch, self.input_width(), upstream)?;
        Ok((grads, input_grad))
    }

    /// Appends parameters layer by layer: row-major weights, then bias.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`Self::write_params`] order; returns values consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        if src.len() < self.param_count() {
            return Err(shape_err("parameter buffer too short"));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        Ok(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpNetwork::new(vec![
            Dense::zeros(3, 4, Activation::Relu),
            Dense::zeros(4, 2, Activation::Identity),
        ])
        .unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
    }

    #[test]
    fn identity_relu_clamps_negatives() {
        let mut layer = Dense::zeros(2, 2, Activation::Relu);
        layer.weights = vec![1.0, 0.0, 0.0, 1.0];
        let net = MlpNetwork::new(vec![layer]).unwrap();
        let x = Tensor::matrix(1, 2, vec![-1.0, 2.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn random_2_4_1_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpNetwork::random(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = [0.3, -1.7];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = [0.0; 4];
        for o in 0..4 {
            let pre = l0.weights[o * 2] * x[0] + l0.weights[o * 2 + 1] * x[1] + l0.bias[o];
            hidden[o] = if pre > 0.0 { pre } else { 0.0 };
        }
        let mut expected = l1.bias[0];
        for o in 0..4 {
            expected += l1.weights[o] * hidden[o];
        }
        let y = net.predict(&Tensor::matrix(1, 2, x.to_vec()).unwrap()).unwrap();
        assert!((y.data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn mismatched_input_is_rejected() {
        let net = MlpNetwork::new(vec![Dense::zeros(3, 1, Activation::Identity)]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::ShapeMismatch(_))));
        assert!(MlpNetwork::new(vec![
            Dense::zeros(3, 2, Activation::Relu),
            Dense::zeros(3, 1, Activation::Identity)
        ])
        .is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::random(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Tensor::zeros(vec![2, 2])).unwrap();
        assert!(g.is_zero());
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_affine_least_squares_gradient() {
        // loss = Σ (Wx + b - t)^2  =>  dW = 2 (pred - t) x^T, db = 2 (pred - t)
        let mut layer = Dense::zeros(3, 2, Activation::Identity);
        layer.weights = vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.5];
        layer.bias = vec![0.1, -0.2];
        let net = MlpNetwork::new(vec![layer.clone()]).unwrap();
        let x = [1.0, 2.0, -1.0];
        let target = [0.3, 0.7];
        let (pred, cache) = net.forward(&Tensor::matrix(1, 3, x.to_vec()).unwrap()).unwrap();
        let resid: Vec<f64> = pred.data().iter().zip(&target).map(|(p, t)| p - t).collect();
        let dy = Tensor::matrix(1, 2, resid.iter().map(|r| 2.0 * r).collect()).unwrap();
        let (g, _) = net.backward(&cache, &dy).unwrap();
        for o in 0..2 {
            assert!((g.layers[0].bias[o] - 2.0 * resid[o]).abs() < 1e-15);
            for i in 0..3 {
                assert!((g.layers[0].weights[o * 3 + i] - 2.0 * resid[o] * x[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, act) in [
            (1u64, Activation::Relu),
            (2, Activation::Sigmoid),
            (3, Activation::Identity),
            (4, Activation::Tanh),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = MlpNetwork::random(&[3, 6, 5, 2], act, Activation::Identity, &mut rng).unwrap();
            let x = Tensor::matrix(4, 3, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect()).unwrap();
            let weights = [0.7, -1.3];
            // loss = Σ_b Σ_o w_o y_bo^2 / 2
            let loss = |n: &MlpNetwork| -> f64 {
                let y = n.predict(&x).unwrap();
                y.data()
                    .chunks(2)
                    .map(|r| 0.5 * (weights[0] * r[0] * r[0] + weights[1] * r[1] * r[1]))
                    .sum()
            };
            let (y, cache) = net.forward(&x).unwrap();
            let dy: Vec<f64> = y
                .data()
                .chunks(2)
                .flat_map(|r| [weights[0] * r[0], weights[1] * r[1]])
                .collect();
            let (g, dx) = net.backward(&cache, &Tensor::matrix(4, 2, dy).unwrap()).unwrap();
            let mut flat = Vec::new();
            g.write_flat(&mut flat);
            let mut params = Vec::new();
            net.write_params(&mut params);
            let mut probe = net.clone();
            let disc = finite_difference_check(
                |p| {
                    probe.read_params(p).unwrap();
                    loss(&probe)
                },
                &flat,
                &params,
                1e-6,
            )
            .unwrap();
            assert!(disc < 1e-4, "{act:?}: {disc}");

            let disc_x = finite_difference_check(
                |p| {
                    let y = net.predict(&Tensor::matrix(4, 3, p.to_vec()).unwrap()).unwrap();
                    y.data()
                        .chunks(2)
                        .map(|r| 0.5 * (weights[0] * r[0] * r[0] + weights[1] * r[1] * r[1]))
                        .sum()
                },
                dx.data(),
                x.data(),
                1e-6,
            )
            .unwrap();
            assert!(disc_x < 1e-4, "{act:?} input: {disc_x}");
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpNetwork::random(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut flat = Vec::new();
        net.write_params(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut other = MlpNetwork::new(vec![
            Dense::zeros(2, 3, Activation::Relu),
            Dense::zeros(3, 1, Activation::Identity),
        ])
        .unwrap();
        assert_eq!(other.read_params(&flat).unwrap(), flat.len());
        assert_eq!(other, net);
    }
}
