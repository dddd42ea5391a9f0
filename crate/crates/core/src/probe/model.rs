use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use super::ProbeError;

pub const DEFAULT_DROPOUT: f64 = 0.5;
/// Hidden layer widths used when none are given.
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// One affine layer; `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Batch normalization for one hidden layer. Running statistics follow
/// `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub batchnorm: bool,
    pub dropout_rate: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            batchnorm: true,
            dropout_rate: DEFAULT_DROPOUT,
        }
    }
}

/// Fully connected classifier: `(affine -> [batch norm] -> ReLU -> [dropout])*`
/// over the hidden layers, then a final affine layer producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<Dense>,
    /// One entry per hidden layer when enabled.
    pub batchnorm: Option<Vec<BatchNorm>>,
    pub dropout_rate: f64,
}

/// Gradients in the model's parameter order (see [`MlpModel::parameters`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Running batch-norm statistics, no dropout.
    Inference,
    /// Batch statistics; dropout masks are drawn from `dropout_seed` when present.
    Training { dropout_seed: Option<u64> },
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Matrix,
    /// Post-normalization (or affine) values fed to ReLU.
    pre_relu: Matrix,
    xhat: Option<Matrix>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Per-element dropout scale: 0 or `1 / (1 - rate)`.
    mask: Option<Vec<f64>>,
}

/// Intermediate values kept by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_dims: Vec<usize>,
    training: bool,
    hidden: Vec<HiddenCache>,
    final_input: Matrix,
    logits: Matrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }
}

pub fn he_init(layer_dims: &[usize], seed: u64, opts: ModelOptions) -> Result<MlpModel, ProbeError> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(ProbeError::InvalidArgument(format!(
            "layer dims must list at least two positive sizes, got {layer_dims:?}"
        )));
    }
    if !(0.0..1.0).contains(&opts.dropout_rate) {
        return Err(ProbeError::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {}",
            opts.dropout_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("finite positive standard deviation");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            Dense {
                weights: Matrix::from_vec(fan_out, fan_in, data),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    let hidden = &layer_dims[1..layer_dims.len() - 1];
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        layers,
        batchnorm: opts
            .batchnorm
            .then(|| hidden.iter().map(|&n| BatchNorm::new(n)).collect()),
        dropout_rate: opts.dropout_rate,
    })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn has_batchnorm(&self) -> bool {
        self.batchnorm.is_some()
    }

    /// Parameter tensors in declaration order: every layer's weights then
    /// bias, followed by every batch-norm gamma then beta.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(&l.bias);
        }
        for bn in self.batchnorm.iter().flatten() {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(&mut l.bias);
        }
        for bn in self.batchnorm.iter_mut().flatten() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    pub fn parameter_sizes(&self) -> Vec<usize> {
        self.parameters().iter().map(|p| p.len()).collect()
    }

    pub fn forward(&self, batch: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache), ProbeError> {
        if batch.cols() != self.input_dim() {
            return Err(ProbeError::Shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let training = matches!(mode, Mode::Training { .. });
        let b = batch.rows();
        if training && self.has_batchnorm() && b < 2 {
            return Err(ProbeError::InvalidArgument(
                "batch normalization in training mode needs at least 2 samples".into(),
            ));
        }
        let mut dropout_rng = match mode {
            Mode::Training {
                dropout_seed: Some(seed),
            } if self.dropout_rate > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);

        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut act = batch.clone();
        for (l, layer) in self.layers[..n_hidden].iter().enumerate() {
            let mut z = act.mul_transposed(&layer.weights);
            add_bias(&mut z, &layer.bias);
            let width = z.cols();
            let mut cache = HiddenCache {
                input: act,
                pre_relu: Matrix::zeros(0, 0),
                xhat: None,
                inv_std: Vec::new(),
                batch_mean: Vec::new(),
                batch_var: Vec::new(),
                mask: None,
            };
            if let Some(bn) = self.batchnorm.as_ref().map(|v| &v[l]) {
                let (mean, var) = if training {
                    column_moments(&z)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
                let mut xhat = z;
                for r in 0..b {
                    for (j, v) in xhat.row_mut(r).iter_mut().enumerate() {
                        *v = (*v - mean[j]) * inv_std[j];
                    }
                }
                let mut y = xhat.clone();
                for r in 0..b {
                    for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                        *v = bn.gamma[j] * *v + bn.beta[j];
                    }
                }
                cache.xhat = Some(xhat);
                cache.inv_std = inv_std;
                cache.batch_mean = mean;
                cache.batch_var = var;
                z = y;
            }
            let mut out = z.clone();
            for v in out.as_mut_slice() {
                *v = v.max(0.0);
            }
            if let Some(rng) = dropout_rng.as_mut() {
                let mask: Vec<f64> = (0..b * width)
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout_rate {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                for (v, m) in out.as_mut_slice().iter_mut().zip(&mask) {
                    *v *= m;
                }
                cache.mask = Some(mask);
            }
            cache.pre_relu = z;
            hidden.push(cache);
            act = out;
        }
        let last = &self.layers[n_hidden];
        let mut logits = act.mul_transposed(&last.weights);
        add_bias(&mut logits, &last.bias);
        let cache = ForwardCache {
            layer_dims: self.layer_dims.clone(),
            training,
            hidden,
            final_input: act,
            logits: logits.clone(),
        };
        Ok((logits, cache))
    }

    /// Inference-mode logits.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix, ProbeError> {
        self.forward(batch, Mode::Inference).map(|(l, _)| l)
    }

    /// Gradients of the mean cross-entropy of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients, ProbeError> {
        if !cache.training {
            return Err(ProbeError::InvalidState(
                "backward needs a cache from a training-mode forward pass".into(),
            ));
        }
        if cache.layer_dims != self.layer_dims
            || cache.hidden.len() + 1 != self.layers.len()
            || cache.hidden.iter().any(|h| h.xhat.is_some()) != self.has_batchnorm()
        {
            return Err(ProbeError::InvalidState(
                "cache was produced by a different model".into(),
            ));
        }
        let b = cache.logits.rows();
        if labels.len() != b {
            return Err(ProbeError::Shape(format!(
                "{} labels for a batch of {b}",
                labels.len()
            )));
        }
        let mut delta = softmax(&cache.logits);
        for (r, &y) in labels.iter().enumerate() {
            check_label(y, delta.cols())?;
            delta[(r, y)] -= 1.0;
        }
        for v in delta.as_mut_slice() {
            *v /= b as f64;
        }

        let n_layers = self.layers.len();
        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n_layers];
        let mut bn_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();

        let last = &self.layers[n_layers - 1];
        layer_grads[n_layers - 1] = (
            delta.transposed_mul(&cache.final_input).as_slice().to_vec(),
            delta.sum_rows(),
        );
        let mut upstream = delta.mul(&last.weights);

        for l in (0..n_layers - 1).rev() {
            let h = &cache.hidden[l];
            let mut dy = upstream;
            if let Some(mask) = &h.mask {
                for (g, m) in dy.as_mut_slice().iter_mut().zip(mask) {
                    *g *= m;
                }
            }
            for (g, y) in dy.as_mut_slice().iter_mut().zip(h.pre_relu.as_slice()) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
            let dz = match (&h.xhat, &self.batchnorm) {
                (Some(xhat), Some(bns)) => {
                    let bn = &bns[l];
                    let width = dy.cols();
                    let mut dgamma = vec![0.0; width];
                    let mut dbeta = vec![0.0; width];
                    for r in 0..b {
                        for j in 0..width {
                            dgamma[j] += dy[(r, j)] * xhat[(r, j)];
                            dbeta[j] += dy[(r, j)];
                        }
                    }
                    // dxhat = dy * gamma; sum(dxhat) = gamma * dbeta and
                    // sum(dxhat * xhat) = gamma * dgamma.
                    let bf = b as f64;
                    let mut dz = Matrix::zeros(b, width);
                    for r in 0..b {
                        for j in 0..width {
                            let dxhat = dy[(r, j)] * bn.gamma[j];
                            dz[(r, j)] = h.inv_std[j] / bf
                                * (bf * dxhat
                                    - bn.gamma[j] * dbeta[j]
                                    - xhat[(r, j)] * bn.gamma[j] * dgamma[j]);
                        }
                    }
                    bn_grads.push((dgamma, dbeta));
                    dz
                }
                _ => dy,
            };
            layer_grads[l] = (dz.transposed_mul(&h.input).as_slice().to_vec(), dz.sum_rows());
            upstream = if l > 0 {
                dz.mul(&self.layers[l].weights)
            } else {
                Matrix::zeros(0, 0)
            };
        }
        bn_grads.reverse();

        let mut tensors = Vec::with_capacity(2 * n_layers + 2 * bn_grads.len());
        for (w, bias) in layer_grads {
            tensors.push(w);
            tensors.push(bias);
        }
        for (g, beta) in bn_grads {
            tensors.push(g);
            tensors.push(beta);
        }
        Ok(Gradients { tensors })
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if let Some(bns) = self.batchnorm.as_mut() {
            for (bn, h) in bns.iter_mut().zip(&cache.hidden) {
                if h.batch_mean.len() != bn.running_mean.len() {
                    continue;
                }
                let m = bn.momentum;
                for (r, v) in bn.running_mean.iter_mut().zip(&h.batch_mean) {
                    *r = m * *r + (1.0 - m) * v;
                }
                for (r, v) in bn.running_var.iter_mut().zip(&h.batch_var) {
                    *r = m * *r + (1.0 - m) * v;
                }
            }
        }
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Per-column mean and biased variance.
fn column_moments(z: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = z.rows() as f64;
    let mean: Vec<f64> = z.sum_rows().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (j, v) in z.row(r).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

fn check_label(y: usize, classes: usize) -> Result<(), ProbeError> {
    if y >= classes {
        return Err(ProbeError::InvalidArgument(format!(
            "label {y} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean of `-log softmax(logits)[label]` over the batch.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64, ProbeError> {
    if labels.len() != logits.rows() {
        return Err(ProbeError::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    if labels.is_empty() {
        return Err(ProbeError::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        check_label(y, logits.cols())?;
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
