use super::{sigmoid, Rng, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Values recorded by a forward pass and consumed by the matching backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

/// Gradients of a scalar loss with respect to a layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|g| *g *= factor);
        self.bias.iter_mut().for_each(|g| *g *= factor);
    }

    /// Flattened as weights followed by bias, the same order as
    /// [`DenseLayer::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }
}

/// Fully connected layer: `activation(weights · input + bias)`.
///
/// `weights` is stored row-major with shape `outputs × inputs`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
    cache: Option<Trace>,
}

impl PartialEq for DenseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.activation == other.activation
            && self.weights == other.weights
            && self.bias == other.bias
    }
}

impl DenseLayer {
    /// Zero-initialized layer.
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        assert!(inputs > 0 && outputs > 0, "layer dimensions must be positive");
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
            cache: None,
        }
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::precondition("layer dimensions must be positive"));
        }
        if weights.len() != inputs * outputs {
            return Err(Error::DimensionMismatch {
                context: "layer weights",
                expected: inputs * outputs,
                found: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::DimensionMismatch {
                context: "layer bias",
                expected: outputs,
                found: bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
            activation,
            cache: None,
        })
    }

    /// Uniform `[-bound, bound]` weights with `bound = gain / sqrt(inputs)`,
    /// zero bias.
    pub fn random(inputs: usize, outputs: usize, activation: Activation, gain: f64, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(inputs, outputs, activation);
        let bound = gain / (inputs as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.range(-bound, bound);
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights then bias, flattened.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.weights.clone();
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "layer parameter vector",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    /// Forward pass that records the values needed by [`DenseLayer::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.forward_traced(input.data())?;
        let out = Tensor::new(vec![self.outputs], trace.output.clone())?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Gradients for the most recent [`DenseLayer::forward`] call, given the
    /// gradient of the loss with respect to this layer's output.
    pub fn backward(&self, upstream: &Tensor) -> Result<(DenseGrads, Tensor)> {
        let trace = self.cache.as_ref().ok_or(Error::NoForwardPass)?;
        let mut grads = DenseGrads::zeros(self);
        let input_grad = self.backward_traced(trace, upstream.data(), &mut grads)?;
        Ok((grads, Tensor::new(vec![self.inputs], input_grad)?))
    }

    /// Stateless forward pass.
    pub fn forward_traced(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                context: "dense layer input",
                expected: self.inputs,
                found: input.len(),
            });
        }
        let mut pre = self.bias.clone();
        for (o, z) in pre.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *z += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        let output = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok(Trace {
            input: input.to_vec(),
            pre,
            output,
        })
    }

    /// Output only, without keeping a trace.
    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.output)
    }

    /// Stateless backward pass. Parameter gradients are *added* into `grads`;
    /// the gradient with respect to the input is returned.
    pub fn backward_traced(&self, trace: &Trace, upstream: &[f64], grads: &mut DenseGrads) -> Result<Vec<f64>> {
        if upstream.len() != self.outputs {
            return Err(Error::DimensionMismatch {
                context: "dense layer upstream gradient",
                expected: self.outputs,
                found: upstream.len(),
            });
        }
        let mut input_grad = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            let delta = upstream[o] * self.activation.derivative(trace.pre[o], trace.output[o]);
            if delta == 0.0 {
                continue;
            }
            grads.bias[o] += delta;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grads.weights[row + i] += delta * trace.input[i];
                input_grad[i] += delta * self.weights[row + i];
            }
        }
        Ok(input_grad)
    }

    /// In-place SGD update from accumulated gradients.
    pub fn step(&mut self, grads: &DenseGrads, rate: f64, direction: super::Direction) -> Result<()> {
        super::sgd_step(&mut self.weights, &grads.weights, rate, direction)?;
        super::sgd_step(&mut self.bias, &grads.bias, rate, direction)
    }
}

/// A stack of dense layers whose scalar loss is the sum of the final outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layers",
                    expected: pair[0].outputs(),
                    found: pair[1].inputs(),
                });
            }
        }
        if layers.is_empty() {
            return Err(Error::precondition("network needs at least one layer"));
        }
        Ok(Self { layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "network parameter vector",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.set_params(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn loss(&self, input: &[f64]) -> Result<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.apply(&x)?;
        }
        Ok(x.iter().sum())
    }

    /// Loss and flattened parameter gradient.
    pub fn loss_and_grad(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let t = layer.forward_traced(&x)?;
            x = t.output.clone();
            traces.push(t);
        }
        let loss = x.iter().sum();
        let mut upstream = vec![1.0; x.len()];
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, trace) in self.layers.iter().zip(&traces).rev() {
            let mut g = DenseGrads::zeros(layer);
            upstream = layer.backward_traced(trace, &upstream, &mut g)?;
            per_layer.push(g);
        }
        per_layer.reverse();
        Ok((loss, per_layer.iter().flat_map(DenseGrads::flat).collect()))
    }
}
