//! Fully connected sigmoid network with a softmax/cross-entropy head.
//!
//! Parameters live in one [`BlockedVector`] with one block per layer. Block
//! `l` holds the `fan_in × fan_out` weight matrix (row-major) followed by the
//! `fan_out` biases.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::blocked::{BlockLayout, BlockedVector};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::numerics::{gemm_acc, transpose_into};
use crate::rng::SplitMix64;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug)]
pub struct MlpModel {
    dims: Vec<usize>,
    params: BlockedVector,
    activation: Activation,
    id: u64,
    generation: u64,
}

impl Clone for MlpModel {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            params: self.params.clone(),
            activation: self.activation,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

/// Block layout for widths `dims[0] → … → dims[L]`.
pub fn layer_layout(dims: &[usize]) -> Result<BlockLayout> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "an MLP needs at least two positive widths, got {dims:?}"
        )));
    }
    let sizes: Vec<usize> = dims.windows(2).map(|w| w[0] * w[1] + w[1]).collect();
    BlockLayout::from_sizes(&sizes)
}

/// Activations recorded by [`MlpModel::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    generation: u64,
    targets: Vec<usize>,
    /// Post-sigmoid outputs of every hidden layer, each `batch × width`.
    hidden: Vec<Vec<f64>>,
    /// Softmax probabilities, `batch × classes`.
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let layout = layer_layout(dims)?;
        let mut params = BlockedVector::zeros(layout);
        let mut rng = SplitMix64::new(seed);
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let block = params.block_mut(l);
            for x in &mut block[..fan_in * fan_out] {
                *x = rng.uniform(-a, a);
            }
        }
        Ok(Self::from_parts(dims.to_vec(), params))
    }

    pub fn with_params(dims: &[usize], params: BlockedVector) -> Result<Self> {
        let layout = layer_layout(dims)?;
        if params.layout() != &layout {
            return Err(Error::Layout(format!(
                "parameters have offsets {:?}, widths {dims:?} need {:?}",
                params.layout().offsets(),
                layout.offsets()
            )));
        }
        params.ensure_finite("MLP parameters")?;
        Ok(Self::from_parts(dims.to_vec(), params))
    }

    fn from_parts(dims: Vec<usize>, params: BlockedVector) -> Self {
        Self {
            dims,
            params,
            activation: Activation::Sigmoid,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &BlockedVector {
        &self.params
    }

    /// Mutable parameters. Any forward cache taken before this call becomes stale.
    pub fn params_mut(&mut self) -> &mut BlockedVector {
        self.generation += 1;
        &mut self.params
    }

    pub fn layout(&self) -> &BlockLayout {
        self.params.layout()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.inputs.cols() != self.dims[0] {
            return Err(Error::Shape {
                op: "MlpModel::forward",
                detail: format!("input width {} but model expects {}", batch.inputs.cols(), self.dims[0]),
            });
        }
        if batch.inputs.rows() != batch.targets.len() || batch.is_empty() {
            return Err(Error::Shape {
                op: "MlpModel::forward",
                detail: format!("{} rows, {} targets", batch.inputs.rows(), batch.targets.len()),
            });
        }
        let classes = *self.dims.last().unwrap();
        if let Some(&y) = batch.targets.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!("target {y} outside 0..{classes}")));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and the activation cache for [`Self::backward`].
    pub fn forward(&self, batch: &Batch) -> Result<(f64, ForwardCache)> {
        self.check_batch(batch)?;
        let (loss, hidden, probs) = forward_pass(&self.dims, self.params.as_slice(), self.layout(), batch, true);
        Ok((
            loss,
            ForwardCache {
                model_id: self.id,
                generation: self.generation,
                targets: batch.targets.clone(),
                hidden,
                probs,
            },
        ))
    }

    /// Mean loss with the parameters replaced by `params` (same layout).
    pub fn loss_with_params(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                op: "MlpModel::loss_with_params",
                detail: format!("{} parameters, model has {}", params.len(), self.params.len()),
            });
        }
        Ok(forward_pass(&self.dims, params, self.layout(), batch, false).0)
    }

    /// `∂(mean loss)/∂params`, laid out like the parameters.
    pub fn backward(&self, batch: &Batch, cache: &ForwardCache) -> Result<BlockedVector> {
        if cache.model_id != self.id || cache.generation != self.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if cache.targets != batch.targets {
            return Err(Error::StaleCache("cache was produced for a different batch".into()));
        }
        let n = batch.len();
        let layers = self.num_layers();
        let inv_n = 1.0 / n as f64;
        let mut grad = BlockedVector::zeros(self.layout().clone());

        let classes = self.dims[layers];
        let mut delta = cache.probs.clone();
        for (row, &y) in delta.chunks_exact_mut(classes).zip(&batch.targets) {
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= inv_n;
            }
        }

        let mut w_t = Vec::new();
        let mut input_t = Vec::new();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let input: &[f64] = if l == 0 {
                batch.inputs.as_slice()
            } else {
                &cache.hidden[l - 1]
            };
            {
                let g = grad.block_mut(l);
                let (gw, gb) = g.split_at_mut(fan_in * fan_out);
                // dW = inputᵀ · delta, summed over the batch in row order.
                input_t.resize(n * fan_in, 0.0);
                transpose_into(input, n, fan_in, &mut input_t);
                gemm_acc(&input_t, &delta, gw, fan_in, n, fan_out);
                for d_row in delta.chunks_exact(fan_out) {
                    for (b, &d) in gb.iter_mut().zip(d_row) {
                        *b += d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params.block(l)[..fan_in * fan_out];
            w_t.resize(fan_in * fan_out, 0.0);
            transpose_into(w, fan_in, fan_out, &mut w_t);
            let mut prev = vec![0.0; n * fan_in];
            gemm_acc(&delta, &w_t, &mut prev, n, fan_out, fan_in);
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= a * (1.0 - a);
            }
            delta = prev;
        }
        Ok(grad)
    }

    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, BlockedVector)> {
        let (loss, cache) = self.forward(batch)?;
        let grad = self.backward(batch, &cache)?;
        Ok((loss, grad))
    }

    /// Mean loss and accuracy over a whole dataset, evaluated in chunks.
    pub fn evaluate(&self, ds: &Dataset, chunk: usize) -> Result<(f64, f64)> {
        let chunk = chunk.max(1);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let classes = *self.dims.last().unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        for part in idx.chunks(chunk) {
            let batch = ds.gather(part);
            self.check_batch(&batch)?;
            let (mean, _, probs) = forward_pass(&self.dims, self.params.as_slice(), self.layout(), &batch, true);
            loss_sum += mean * part.len() as f64;
            for (row, &y) in probs.chunks_exact(classes).zip(&batch.targets) {
                if argmax(row) == y {
                    correct += 1;
                }
            }
        }
        Ok((loss_sum / ds.len() as f64, correct as f64 / ds.len() as f64))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Returns `(mean loss, hidden activations, softmax probabilities)`.
/// Hidden activations are only kept when `keep` is set.
fn forward_pass(
    dims: &[usize],
    params: &[f64],
    layout: &BlockLayout,
    batch: &Batch,
    keep: bool,
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let n = batch.len();
    let layers = dims.len() - 1;
    let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
    let mut current: Vec<f64> = Vec::new();
    let mut logits = Vec::new();
    for l in 0..layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let block = &params[layout.range(l)];
        let (w, b) = block.split_at(fan_in * fan_out);
        let mut z = Vec::with_capacity(n * fan_out);
        for _ in 0..n {
            z.extend_from_slice(b);
        }
        let input: &[f64] = if l == 0 { batch.inputs.as_slice() } else { &current };
        gemm_acc(input, w, &mut z, n, fan_in, fan_out);
        if l + 1 == layers {
            logits = z;
        } else {
            for v in &mut z {
                *v = sigmoid(*v);
            }
            let prev = std::mem::replace(&mut current, z);
            if keep && l > 0 {
                hidden.push(prev);
            }
        }
    }
    if keep && layers > 1 {
        hidden.push(current);
    }
    let classes = dims[layers];
    let mut loss = 0.0;
    let mut probs = logits;
    for (row, &y) in probs.chunks_exact_mut(classes).zip(&batch.targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        // -log softmax_y = log Σ exp(z - max) - (z_y - max)
        loss += sum.ln() - row[y].ln();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    (loss / n as f64, hidden, probs)
}

/// Central differences `(f(x + h e_j) − f(x − h e_j)) / 2h` for every coordinate.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = f(&probe)?;
        probe[j] = x[j] - h;
        let down = f(&probe)?;
        probe[j] = x[j];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn finite_diff_grad(model: &MlpModel, batch: &Batch, h: f64) -> Result<BlockedVector> {
    let g = central_difference(model.params().as_slice(), h, |p| model.loss_with_params(p, batch))?;
    BlockedVector::new(g, model.layout().clone())
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all coordinates.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
