use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::ndnum::{clamp_prob, sigmoid, Activation, DenseGrads, DenseLayer, Direction, Rng, Trace};

/// Per-cell channel mixer with a residual connection:
/// `out = in + L2(relu(L1(in)))`, applied identically at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub mix: DenseLayer,
    pub out: DenseLayer,
}

/// Traces of one generator pass, one pair per cell.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    cells: Vec<(Trace, Trace)>,
}

#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub mix: DenseGrads,
    pub out: DenseGrads,
}

impl GeneratorGrads {
    pub fn zeros(gen: &Generator) -> Self {
        Self {
            mix: DenseGrads::zeros(&gen.mix),
            out: DenseGrads::zeros(&gen.out),
        }
    }

    pub fn add(&mut self, other: &GeneratorGrads) {
        add_grads(&mut self.mix, &other.mix);
        add_grads(&mut self.out, &other.out);
    }

    pub fn scale(&mut self, factor: f64) {
        self.mix.scale(factor);
        self.out.scale(factor);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mix.flat();
        v.extend(self.out.flat());
        v
    }
}

pub(crate) fn add_grads(into: &mut DenseGrads, other: &DenseGrads) {
    into.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += b);
    into.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += b);
}

impl Generator {
    /// Exact identity: both layers zero.
    pub fn identity(channels: usize) -> Self {
        Self {
            mix: DenseLayer::zeros(channels, channels, Activation::Relu),
            out: DenseLayer::zeros(channels, channels, Activation::Identity),
        }
    }

    /// Random mixing layer, zero output layer: starts as the identity map.
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Self {
            mix: DenseLayer::random(channels, channels, Activation::Relu, 1.0, rng),
            out: DenseLayer::zeros(channels, channels, Activation::Identity),
        }
    }

    pub fn from_layers(mix: DenseLayer, out: DenseLayer) -> Result<Self> {
        let c = mix.inputs();
        if mix.outputs() != c || out.inputs() != c || out.outputs() != c {
            return Err(Error::precondition("generator layers must all be C -> C"));
        }
        Ok(Self { mix, out })
    }

    pub fn channels(&self) -> usize {
        self.mix.inputs()
    }

    fn check(&self, f: &FeatureMap) -> Result<()> {
        if f.channels() != self.channels() {
            return Err(Error::DimensionMismatch {
                context: "generator channels",
                expected: self.channels(),
                found: f.channels(),
            });
        }
        Ok(())
    }

    /// Refined feature map.
    pub fn generate(&self, f: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_traced(f)?.0)
    }

    pub fn forward_traced(&self, f: &FeatureMap) -> Result<(FeatureMap, GeneratorTrace)> {
        self.check(f)?;
        let n = f.cells();
        let c = f.channels();
        let mut data = f.data().to_vec();
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let input = f.cell(i);
            let t1 = self.mix.forward_traced(&input)?;
            let t2 = self.out.forward_traced(&t1.output)?;
            for ch in 0..c {
                data[ch * n + i] += t2.output[ch];
            }
            cells.push((t1, t2));
        }
        let out = FeatureMap::new(c, f.width(), f.height(), data)?;
        Ok((out, GeneratorTrace { cells }))
    }

    /// Adds parameter gradients for `upstream` (the loss gradient with respect
    /// to the generated map, in map order) and returns the gradient with
    /// respect to the input map.
    pub fn backward(&self, trace: &GeneratorTrace, upstream: &[f64], grads: &mut GeneratorGrads) -> Result<Vec<f64>> {
        let n = trace.cells.len();
        let c = self.channels();
        if upstream.len() != n * c {
            return Err(Error::DimensionMismatch {
                context: "generator upstream gradient",
                expected: n * c,
                found: upstream.len(),
            });
        }
        let mut input_grad = upstream.to_vec();
        let mut g = vec![0.0; c];
        for (i, (t1, t2)) in trace.cells.iter().enumerate() {
            for ch in 0..c {
                g[ch] = upstream[ch * n + i];
            }
            let g_hidden = self.out.backward_traced(t2, &g, &mut grads.out)?;
            let g_in = self.mix.backward_traced(t1, &g_hidden, &mut grads.mix)?;
            for ch in 0..c {
                input_grad[ch * n + i] += g_in[ch];
            }
        }
        Ok(input_grad)
    }

    pub fn param_count(&self) -> usize {
        self.mix.param_count() + self.out.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.mix.params();
        v.extend(self.out.params());
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "generator parameters",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let (a, b) = flat.split_at(self.mix.param_count());
        self.mix.set_params(a)?;
        self.out.set_params(b)
    }

    pub fn step(&mut self, grads: &GeneratorGrads, rate: f64, direction: Direction) -> Result<()> {
        self.mix.step(&grads.mix, rate, direction)?;
        self.out.step(&grads.out, rate, direction)
    }

    /// True when the residual branch is exactly zero for every input.
    pub fn is_identity(&self) -> bool {
        self.out.weights().iter().all(|&w| w == 0.0) && self.out.bias().iter().all(|&b| b == 0.0)
    }
}

/// Flattened map → hidden relu layer → one logit → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    hidden: Trace,
    out: Trace,
}

impl DiscriminatorTrace {
    pub fn logit(&self) -> f64 {
        self.out.output[0]
    }

    /// Unclamped sigmoid of the logit.
    pub fn raw_probability(&self) -> f64 {
        sigmoid(self.logit())
    }

    /// Probability after clamping.
    pub fn probability(&self) -> f64 {
        clamp_prob(self.raw_probability())
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub hidden: DenseGrads,
    pub out: DenseGrads,
}

impl DiscriminatorGrads {
    pub fn zeros(disc: &Discriminator) -> Self {
        Self {
            hidden: DenseGrads::zeros(&disc.hidden),
            out: DenseGrads::zeros(&disc.out),
        }
    }

    pub fn add(&mut self, other: &DiscriminatorGrads) {
        add_grads(&mut self.hidden, &other.hidden);
        add_grads(&mut self.out, &other.out);
    }

    pub fn scale(&mut self, factor: f64) {
        self.hidden.scale(factor);
        self.out.scale(factor);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.hidden.flat();
        v.extend(self.out.flat());
        v
    }
}

/// Default hidden width.
pub const DISC_HIDDEN: usize = 64;

impl Discriminator {
    /// Random hidden layer and a zero output layer, so the untrained
    /// discriminator answers 0.5 everywhere.
    pub fn new(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: DenseLayer::random(inputs, hidden, Activation::Relu, 1.0, rng),
            out: DenseLayer::zeros(hidden, 1, Activation::Identity),
        }
    }

    pub fn from_layers(hidden: DenseLayer, out: DenseLayer) -> Result<Self> {
        if out.inputs() != hidden.outputs() || out.outputs() != 1 {
            return Err(Error::precondition("discriminator output layer must map hidden -> 1"));
        }
        Ok(Self { hidden, out })
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<DiscriminatorTrace> {
        let hidden = self.hidden.forward_traced(input)?;
        let out = self.out.forward_traced(&hidden.output)?;
        Ok(DiscriminatorTrace { hidden, out })
    }

    /// Clamped probability that `f` is a real visible feature map.
    pub fn probability(&self, f: &FeatureMap) -> Result<f64> {
        Ok(self.forward_traced(f.data())?.probability())
    }

    /// Backpropagates `d_logit` (gradient with respect to the logit). Adds
    /// parameter gradients when `grads` is given; returns the input gradient.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        d_logit: f64,
        grads: Option<&mut DiscriminatorGrads>,
    ) -> Result<Vec<f64>> {
        match grads {
            Some(g) => {
                let gh = self.out.backward_traced(&trace.out, &[d_logit], &mut g.out)?;
                self.hidden.backward_traced(&trace.hidden, &gh, &mut g.hidden)
            }
            None => {
                // Input gradient only.
                let n_in = self.hidden.inputs();
                let mut input_grad = vec![0.0; n_in];
                if d_logit == 0.0 {
                    return Ok(input_grad);
                }
                let w_out = self.out.weights();
                let w = self.hidden.weights();
                for (o, &z) in trace.hidden.pre.iter().enumerate() {
                    if z <= 0.0 {
                        continue;
                    }
                    let delta = d_logit * w_out[o];
                    if delta == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    input_grad.iter_mut().zip(row).for_each(|(g, &wv)| *g += delta * wv);
                }
                Ok(input_grad)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.out.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = self.hidden.params();
        v.extend(self.out.params());
        v
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "discriminator parameters",
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let (a, b) = flat.split_at(self.hidden.param_count());
        self.hidden.set_params(a)?;
        self.out.set_params(b)
    }

    pub fn step(&mut self, grads: &DiscriminatorGrads, rate: f64, direction: Direction) -> Result<()> {
        self.hidden.step(&grads.hidden, rate, direction)?;
        self.out.step(&grads.out, rate, direction)
    }
}

/// Logistic classifier on flattened features, used to rescore proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringHead {
    layer: DenseLayer,
    trained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub epochs: usize,
    pub rate: f64,
    pub weight_decay: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            rate: 0.05,
            weight_decay: 1e-3,
        }
    }
}

impl ScoringHead {
    /// A head that refuses to score until trained.
    pub fn untrained(inputs: usize) -> Self {
        Self {
            layer: DenseLayer::zeros(inputs, 1, Activation::Identity),
            trained: false,
        }
    }

    /// Head with the given weights, ready to score.
    pub fn from_layer(layer: DenseLayer) -> Result<Self> {
        if layer.outputs() != 1 || layer.activation() != Activation::Identity {
            return Err(Error::precondition(
                "scoring head must be an identity layer with one output",
            ));
        }
        Ok(Self { layer, trained: true })
    }

    pub fn layer(&self) -> &DenseLayer {
        &self.layer
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Full-batch gradient descent on the regularized cross-entropy of
    /// `positives` (label 1) against `negatives` (label 0).
    pub fn train(positives: &[FeatureMap], negatives: &[FeatureMap], config: &HeadConfig) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::precondition(
                "scoring head needs both positive and negative samples",
            ));
        }
        let dim = positives[0].data().len();
        let samples: Vec<(&[f64], f64)> = positives
            .iter()
            .map(|f| (f.data(), 1.0))
            .chain(negatives.iter().map(|f| (f.data(), 0.0)))
            .collect();
        if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "scoring head input",
                expected: dim,
                found: x.len(),
            });
        }
        let n = samples.len() as f64;
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut gw = vec![0.0; dim];
        for _ in 0..config.epochs {
            gw.iter_mut().zip(&w).for_each(|(g, &wv)| *g = config.weight_decay * wv);
            let mut gb = 0.0;
            for &(x, y) in &samples {
                let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = (sigmoid(z) - y) / n;
                gb += r;
                gw.iter_mut().zip(x).for_each(|(g, &xv)| *g += r * xv);
            }
            w.iter_mut().zip(&gw).for_each(|(wv, g)| *wv -= config.rate * g);
            b -= config.rate * gb;
        }
        let layer = DenseLayer::from_parts(dim, 1, w, vec![b], Activation::Identity)?;
        Ok(Self { layer, trained: true })
    }

    /// Probability that `f` is a pedestrian.
    pub fn score(&self, f: &FeatureMap) -> Result<f64> {
        if !self.trained {
            return Err(Error::UntrainedHead);
        }
        Ok(sigmoid(self.layer.apply(f.data())?[0]))
    }
}
