//! Small dense softmax classifier trained by backpropagation.
//!
//! Hidden layers are affine + ReLU, the output layer is affine + softmax.
//! Losses supply `∂L/∂ŷ` on the softmax output; [`Network::backward`]
//! composes it with the softmax Jacobian explicitly, so curved and flat
//! losses plug in the same way.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::LossKind;
use crate::metric::{argmax, Metric, OneHotLabel, ProbVector};

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// `outputs x inputs`, row-major.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    seed: u64,
}

/// Per-layer parameter-shaped values (gradients or velocities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    fn scale(&mut self, s: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|v| *v *= s);
    }

    fn same_shape(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].len() == l.weights.len() && self.biases[i].len() == l.biases.len()
            })
    }
}

/// Examples fed through the network together.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    inputs: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidDimension("batch must hold at least one example".into()));
        }
        check_len(inputs.len(), labels.len())?;
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[&'a [f64]] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Forward pass of one example with intermediate values kept for
/// backpropagation.
struct Trace {
    /// Input to each layer (`activations[0]` is the example itself).
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    preacts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Result of a combined forward/loss/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub mean_loss: f64,
    pub grads: Gradients,
    /// Argmax prediction per example.
    pub predictions: Vec<usize>,
    /// Examples whose loss gradient hit the log clamp.
    pub clamped: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least input and output widths, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidDimension(format!(
            "layer widths must be positive, got {layer_dims:?}"
        )));
    }
    if *layer_dims.last().expect("non-empty") < 2 {
        return Err(Error::InvalidDimension(
            "output layer needs at least 2 classes".into(),
        ));
    }
    Ok(())
}

impl Network {
    /// Glorot-uniform weights, zero biases; reproducible from `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| dist.sample(&mut rng)).collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            seed,
        })
    }

    /// All parameters zero.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            seed: 0,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `outputs x inputs` weights of layer `l`, row-major.
    pub fn weights(&self, l: usize) -> &[f64] {
        &self.layers[l].weights
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.layers[l].weights
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        &self.layers[l].biases
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.layers[l].biases
    }

    fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {i}")));
            }
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        check_len(self.input_dim(), x.len())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current);
            let next = if i == last {
                softmax(&z)
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            activations.push(current);
            preacts.push(z);
            current = next;
        }
        Ok(Trace {
            activations,
            preacts,
            output: current,
        })
    }

    /// Output logits of the final affine layer.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_finite()?;
        Ok(self.trace(x)?.preacts.pop().expect("at least one layer"))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProbVector> {
        self.check_finite()?;
        ProbVector::new(self.trace(x)?.output)
    }

    pub fn forward_batch(&self, inputs: &[&[f64]]) -> Result<Vec<ProbVector>> {
        self.check_finite()?;
        inputs
            .iter()
            .map(|x| ProbVector::new(self.trace(x)?.output))
            .collect()
    }

    /// Argmax class for each input.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(self
            .forward_batch(inputs)?
            .iter()
            .map(ProbVector::argmax)
            .collect())
    }

    fn accumulate(&self, trace: &Trace, loss_grad: &[f64], acc: &mut Gradients) -> Result<()> {
        check_len(self.classes(), loss_grad.len())?;
        // Softmax Jacobian: dL/dz_i = ŷ_i · (g_i − Σ_j ŷ_j g_j).
        let y = &trace.output;
        let dot: f64 = y.iter().zip(loss_grad).map(|(p, g)| p * g).sum();
        let mut delta: Vec<f64> = y
            .iter()
            .zip(loss_grad)
            .map(|(p, g)| p * (g - dot))
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            for (o, d) in delta.iter().enumerate() {
                acc.biases[l][o] += d;
                let row = &mut acc.weights[l][o * layer.inputs..(o + 1) * layer.inputs];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            if l > 0 {
                let z_prev = &trace.preacts[l - 1];
                delta = (0..layer.inputs)
                    .map(|i| {
                        if z_prev[i] > 0.0 {
                            (0..layer.outputs)
                                .map(|o| layer.weights[o * layer.inputs + i] * delta[o])
                                .sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(())
    }

    /// Gradients of the mean batch loss with respect to every parameter,
    /// given `∂L/∂ŷ` for each example.
    pub fn backward(&self, batch: &Batch<'_>, loss_grads: &[Vec<f64>]) -> Result<Gradients> {
        check_len(batch.len(), loss_grads.len())?;
        self.check_finite()?;
        let mut acc = Gradients::zeros_like(self);
        for (x, g) in batch.inputs.iter().zip(loss_grads) {
            let trace = self.trace(x)?;
            self.accumulate(&trace, g, &mut acc)?;
        }
        acc.scale(1.0 / batch.len() as f64);
        Ok(acc)
    }

    /// One forward pass per example, loss and loss gradient under `loss`
    /// and `metric`, then backpropagation of the batch mean.
    pub fn evaluate_batch(
        &self,
        batch: &Batch<'_>,
        loss: LossKind,
        metric: &Metric,
    ) -> Result<BatchOutcome> {
        self.check_finite()?;
        let k = self.classes();
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        let mut clamped = 0;
        let mut predictions = Vec::with_capacity(batch.len());
        for (x, &label) in batch.inputs.iter().zip(&batch.labels) {
            let trace = self.trace(x)?;
            let y = OneHotLabel::new(label, k)?;
            total += loss.value_at(metric, y, &trace.output)?;
            let g = loss.gradient_at(metric, y, &trace.output)?;
            clamped += usize::from(g.clamped);
            predictions.push(argmax(&trace.output));
            self.accumulate(&trace, &g.grad, &mut grads)?;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        let mean_loss = total / n;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {mean_loss}")));
        }
        Ok(BatchOutcome {
            mean_loss,
            grads,
            predictions,
            clamped,
        })
    }

    /// Mean loss over a batch without gradients.
    pub fn batch_loss(&self, batch: &Batch<'_>, loss: LossKind, metric: &Metric) -> Result<f64> {
        self.check_finite()?;
        let k = self.classes();
        let mut total = 0.0;
        for (x, &label) in batch.inputs.iter().zip(&batch.labels) {
            let out = self.trace(x)?.output;
            total += loss.value_at(metric, OneHotLabel::new(label, k)?, &out)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn to_checkpoint(&self, epoch: u64) -> NetworkCheckpoint {
        NetworkCheckpoint {
            layer_dims: self.layer_dims.clone(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
            seed: self.seed,
            epoch,
        }
    }

    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self> {
        check_dims(&ck.layer_dims)?;
        let expected = ck.layer_dims.len() - 1;
        check_len(expected, ck.weights.len())?;
        check_len(expected, ck.biases.len())?;
        let mut layers = Vec::with_capacity(expected);
        for (i, w) in ck.layer_dims.windows(2).enumerate() {
            let (inputs, outputs) = (w[0], w[1]);
            let rows = &ck.weights[i];
            check_len(outputs, rows.len())?;
            let mut weights = Vec::with_capacity(inputs * outputs);
            for row in rows {
                check_len(inputs, row.len())?;
                weights.extend_from_slice(row);
            }
            check_len(outputs, ck.biases[i].len())?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                biases: ck.biases[i].clone(),
            });
        }
        let net = Self {
            layer_dims: ck.layer_dims.clone(),
            layers,
            seed: ck.seed,
        };
        net.check_finite()?;
        Ok(net)
    }
}

/// Structured network file `{layer_dims, weights, biases, seed, epoch}`.
/// `weights[l]` is `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    pub epoch: u64,
}

/// Network plus SGD-with-momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub network: Network,
    pub velocity: Gradients,
    pub epoch: u64,
    pub rng_seed: u64,
}

impl TrainState {
    pub fn new(network: Network, rng_seed: u64) -> Self {
        let velocity = Gradients::zeros_like(&network);
        Self {
            network,
            velocity,
            epoch: 0,
            rng_seed,
        }
    }

    /// `v ← momentum·v − lr·grad; θ ← θ + v`. Rejects non-finite gradients
    /// before touching any parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !grads.same_shape(&self.network) {
            return Err(Error::InvalidDimension(
                "gradient shapes do not match the network".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        for (l, layer) in self.network.layers.iter_mut().enumerate() {
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let vel = self.velocity.weights[l]
                .iter_mut()
                .chain(self.velocity.biases[l].iter_mut());
            let grad = grads.weights[l].iter().chain(&grads.biases[l]);
            for ((p, v), g) in params.zip(vel).zip(grad) {
                *v = momentum * *v - lr * g;
                *p += *v;
            }
        }
        Ok(())
    }
}
