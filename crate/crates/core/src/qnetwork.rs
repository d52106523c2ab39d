//! Fully-connected Q-network trained with plain SGD on a mean-squared error.
//!
//! Hidden layers are affine maps followed by ReLU; the output layer is affine
//! only and has one unit per codebook beam. All arithmetic is `f64`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Samples per gradient chunk. Chunks are reduced in order so results do not
/// depend on how many threads ran them.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.biases).map(|(row, b)| {
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &QNetwork) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Same ordering as [`QNetwork::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }
}

/// One `(state, target)` training pair.
pub type Sample<'a> = (&'a [f64], &'a [f64]);

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

impl QNetwork {
    /// All-zero network with the given `[input, hidden..., output]` sizes.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes need an input and an output, all positive: {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(QNetwork {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// He initialisation: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let normal = Normal::new(0.0, (2.0 / layer.in_dim as f64).sqrt()).expect("finite std");
            layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Row-major `(out x in)` weights of layer `i`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].weights
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].weights
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].biases
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.layers[layer].biases
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Layer by layer, weights then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                state.len()
            )));
        }
        Ok(())
    }

    /// Q-value of every action for `state`.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state)?;
        let mut current = state.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&current, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    /// Activations of every layer, input first.
    fn forward_trace(&self, state: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(state.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&acts[i], &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    fn check_batch(&self, batch: &[Sample<'_>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Config("training batch is empty".into()));
        }
        for (state, target) in batch {
            self.check_input(state)?;
            if target.len() != self.output_dim() {
                return Err(Error::Dimension(format!(
                    "target has {} entries, network has {} outputs",
                    target.len(),
                    self.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Mean over the batch of the per-sample mean squared error.
    pub fn loss(&self, batch: &[Sample<'_>]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for (state, target) in batch {
            let pred = self.forward(state)?;
            total += mse(&pred, target);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its exact gradient by backpropagation.
    pub fn loss_and_gradients(&self, batch: &[Sample<'_>]) -> Result<(f64, Gradients)> {
        self.loss_and_gradients_with(batch, Execution::Sequential)
    }

    pub fn loss_and_gradients_with(
        &self,
        batch: &[Sample<'_>],
        exec: Execution,
    ) -> Result<(f64, Gradients)> {
        self.check_batch(batch)?;
        let chunks: Vec<&[Sample<'_>]> = batch.chunks(GRAD_CHUNK).collect();
        let scale = 1.0 / batch.len() as f64;
        let partial = par::map_indexed(exec, chunks.len(), |c| {
            let mut grads = Gradients::zeros_like(self);
            let mut loss = 0.0;
            for (state, target) in chunks[c] {
                loss += self.backprop_into(state, target, scale, &mut grads);
            }
            (loss, grads)
        });
        let mut iter = partial.into_iter();
        let (mut loss, mut grads) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss * scale, grads))
    }

    /// Accumulates `scale * d mse / d params` into `grads`, returns the
    /// sample's unscaled loss.
    fn backprop_into(&self, state: &[f64], target: &[f64], scale: f64, grads: &mut Gradients) -> f64 {
        let acts = self.forward_trace(state);
        let pred = acts.last().expect("output layer");
        let outputs = pred.len() as f64;
        let loss = mse(pred, target);
        let mut delta: Vec<f64> = pred
            .iter()
            .zip(target)
            .map(|(p, t)| 2.0 * (p - t) / outputs * scale)
            .collect();

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[i];
            let gw = &mut grads.weights[i];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    row.iter_mut().zip(input).for_each(|(g, x)| *g += d * x);
                }
            }
            grads.biases[i].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            if i == 0 {
                break;
            }
            let mut back = vec![0.0; layer.in_dim];
            for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if d != 0.0 {
                    back.iter_mut().zip(row).for_each(|(b, w)| *b += w * d);
                }
            }
            // ReLU derivative, taken as zero at the kink
            back.iter_mut()
                .zip(input)
                .for_each(|(b, &a)| if a <= 0.0 { *b = 0.0 });
            delta = back;
        }
        loss
    }

    /// Plain SGD step, `params -= learning_rate * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weights
                .iter_mut()
                .zip(&grads.weights[i])
                .for_each(|(w, g)| *w -= learning_rate * g);
            layer
                .biases
                .iter_mut()
                .zip(&grads.biases[i])
                .for_each(|(b, g)| *b -= learning_rate * g);
        }
    }

    /// One SGD step on the batch; returns the loss before the update.
    ///
    /// A non-finite loss leaves the parameters untouched and reports
    /// [`Error::Divergence`].
    pub fn train_step(&mut self, batch: &[Sample<'_>], learning_rate: f64) -> Result<f64> {
        self.train_step_with(batch, learning_rate, Execution::Sequential)
    }

    pub fn train_step_with(
        &mut self,
        batch: &[Sample<'_>],
        learning_rate: f64,
        exec: Execution,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients_with(batch, exec)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { loss });
        }
        self.apply_gradients(&grads, learning_rate);
        if self.layers.iter().any(|l| {
            l.weights.iter().chain(&l.biases).any(|v| !v.is_finite())
        }) {
            return Err(Error::Divergence { loss: f64::NAN });
        }
        Ok(loss)
    }

    /// Independent copy for use as a target network.
    pub fn sync_target(&self) -> QNetwork {
        self.clone()
    }

    /// Indices of the `k` largest Q-values, descending, lowest index on ties.
    pub fn predict_topk(&self, state: &[f64], k: usize) -> Result<Vec<usize>> {
        let q = self.forward(state)?;
        if k == 0 || k > q.len() {
            return Err(Error::Config(format!(
                "k_B must be in 1..={}, got {k}",
                q.len()
            )));
        }
        Ok(top_k(&q, k))
    }

    /// Multiplies the output layer's weights and biases by `c`.
    pub fn scale_output(&mut self, c: f64) {
        let last = self.layers.last_mut().expect("output layer");
        last.weights.iter_mut().for_each(|w| *w *= c);
        last.biases.iter_mut().for_each(|b| *b *= c);
    }

    /// Checkpoint bytes: little-endian `u64` count of layer sizes, the sizes,
    /// then per layer the row-major weights and the biases as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (1 + self.layer_sizes.len() + self.num_params()));
        out.extend_from_slice(&(self.layer_sizes.len() as u64).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for v in self.params_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut words = bytes.chunks_exact(8);
        if !words.remainder().is_empty() {
            return Err("length is not a multiple of 8 bytes".into());
        }
        let mut next_u64 = || {
            words
                .next()
                .map(|w| u64::from_le_bytes(w.try_into().expect("8 bytes")))
        };
        let count = next_u64().ok_or("missing layer count")? as usize;
        if !(2..=64).contains(&count) {
            return Err(format!("implausible layer count {count}"));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let s = next_u64().ok_or("truncated layer sizes")?;
            sizes.push(usize::try_from(s).map_err(|_| "layer size overflow")?);
        }
        let mut net = QNetwork::zeros(&sizes).map_err(|e| e.to_string())?;
        let expected = 8 * (1 + count + net.num_params());
        if bytes.len() != expected {
            return Err(format!(
                "expected {expected} bytes for layers {sizes:?}, found {}",
                bytes.len()
            ));
        }
        let params: Vec<f64> = bytes[8 * (1 + count)..]
            .chunks_exact(8)
            .map(|w| f64::from_le_bytes(w.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        net.set_params_flat(&params).map_err(|e| e.to_string())?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::malformed(path, reason))
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Indices of the `k` largest values, descending, lowest index on ties.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
