//! Feed-forward MLP with exact backpropagation.
//!
//! Each layer computes `s = W ā` where `ā` is the previous activation with a
//! trailing homogeneous `1` row, so the last column of `W` is the bias. An
//! optional batch normalization follows the affine map, then the element-wise
//! activation. The output layer has no activation; the loss owns the output
//! nonlinearity.
//!
//! Backward stores the per-sample pre-activation derivatives `g` in the
//! [`BatchCache`] scaled so that `𝒟W = (1/B) g āᵀ`, which is the form the
//! curvature statistics consume.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Negative log-likelihood attached to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Single logit, labels in {0, 1}.
    BernoulliLogit,
    /// One logit per class, labels are class indices.
    SoftmaxCe,
    /// `½‖y − f‖²`, the unit-variance Gaussian NLL without its constant.
    Mse,
}

/// Which labels feed a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Training labels (the loss gradient, or the empirical Fisher when used for statistics).
    Data,
    /// Labels drawn from the model's predictive distribution (true Fisher).
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    batchnorm: Vec<bool>,
    loss: LossKind,
}

impl Architecture {
    /// `layer_dims` is `d_0..d_L`; `activations` and `batchnorm` have one entry per layer.
    pub fn new(
        layer_dims: Vec<usize>,
        activations: Vec<Activation>,
        batchnorm: Vec<bool>,
        loss: LossKind,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("layer_dims", "need at least an input and an output dimension"));
        }
        if let Some(i) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::config("layer_dims", format!("dimension {i} is zero")));
        }
        let l = layer_dims.len() - 1;
        if activations.len() != l || batchnorm.len() != l {
            return Err(Error::config(
                "activations",
                format!(
                    "{l} layers need {l} activations and batchnorm flags, got {} and {}",
                    activations.len(),
                    batchnorm.len()
                ),
            ));
        }
        if activations[l - 1] != Activation::Identity {
            return Err(Error::config("activations", "output layer activation must be identity"));
        }
        if loss == LossKind::BernoulliLogit && layer_dims[l] != 1 {
            return Err(Error::config("layer_dims", "bernoulli_logit needs a single output unit"));
        }
        Ok(Self {
            layer_dims,
            activations,
            batchnorm,
            loss,
        })
    }

    /// Uniform MLP: `hidden` activation and batch norm on every layer but the output.
    pub fn mlp(dims: &[usize], hidden: Activation, batchnorm: bool, loss: LossKind) -> Result<Self> {
        let l = dims.len().saturating_sub(1);
        let mut acts = vec![hidden; l];
        let mut bn = vec![batchnorm; l];
        if l > 0 {
            acts[l - 1] = Activation::Identity;
            bn[l - 1] = false;
        }
        Self::new(dims.to_vec(), acts, bn, loss)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[self.num_layers()]
    }

    pub fn activation(&self, layer: usize) -> Activation {
        self.activations[layer]
    }

    pub fn has_batchnorm(&self, layer: usize) -> bool {
        self.batchnorm[layer]
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Shape of `W_layer`: `d_{layer+1} × (d_layer + 1)`.
    pub fn weight_shape(&self, layer: usize) -> (usize, usize) {
        (self.layer_dims[layer + 1], self.layer_dims[layer] + 1)
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        let (r, c) = self.weight_shape(layer);
        r * c
    }

    /// `(offset, len)` of each layer inside the flat parameter vector.
    pub fn layer_extents(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        (0..self.num_layers())
            .map(|l| {
                let n = self.layer_param_count(l);
                let e = (off, n);
                off += n;
                e
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers()).map(|l| self.layer_param_count(l)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub bn: Vec<Option<BatchNormParams>>,
}

impl Params {
    /// Gaussian weights with standard deviation `sqrt(1/fan_in)`, zero biases, identity BN.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let weights = (0..arch.num_layers())
            .map(|l| {
                let (rows, cols) = arch.weight_shape(l);
                let std = (1.0 / (cols - 1) as f64).sqrt();
                let mut w = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    for j in 0..cols - 1 {
                        let z: f64 = StandardNormal.sample(rng);
                        w[(i, j)] = std * z;
                    }
                }
                w
            })
            .collect();
        let bn = (0..arch.num_layers())
            .map(|l| arch.has_batchnorm(l).then(|| BatchNormParams::new(arch.layer_dims()[l + 1])))
            .collect();
        Self { weights, bn }
    }

    /// All-zero weights with identity BN.
    pub fn zeros(arch: &Architecture) -> Self {
        let weights = (0..arch.num_layers())
            .map(|l| {
                let (r, c) = arch.weight_shape(l);
                Matrix::zeros(r, c)
            })
            .collect();
        let bn = (0..arch.num_layers())
            .map(|l| arch.has_batchnorm(l).then(|| BatchNormParams::new(arch.layer_dims()[l + 1])))
            .collect();
        Self { weights, bn }
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.weights.len() != arch.num_layers() || self.bn.len() != arch.num_layers() {
            return Err(Error::State(format!(
                "params have {} layers, architecture has {}",
                self.weights.len(),
                arch.num_layers()
            )));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.shape() != arch.weight_shape(l) {
                return Err(Error::State(format!(
                    "layer {l} weight is {:?}, expected {:?}",
                    w.shape(),
                    arch.weight_shape(l)
                )));
            }
            if self.bn[l].is_some() != arch.has_batchnorm(l) {
                return Err(Error::State(format!("layer {l} batch-norm parameters do not match architecture")));
            }
        }
        Ok(())
    }

    /// θ: every `W_i` column-stacked, in layer order.
    pub fn theta(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.to_col_vec()).collect()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        let total: usize = self.weights.iter().map(|w| w.rows() * w.cols()).sum();
        if theta.len() != total {
            return Err(Error::dim("set_theta", format!("expected {total} values, got {}", theta.len())));
        }
        let mut off = 0;
        for w in &mut self.weights {
            let (r, c) = w.shape();
            for j in 0..c {
                for i in 0..r {
                    w[(i, j)] = theta[off];
                    off += 1;
                }
            }
        }
        Ok(())
    }

    /// Folds a training-mode batch's BN statistics into the running estimates.
    pub fn update_bn_running(&mut self, cache: &BatchCache) {
        let batch = cache.batch_size();
        for (bn, c) in self.bn.iter_mut().zip(&cache.bn) {
            if let (Some(p), Some(c)) = (bn.as_mut(), c.as_ref()) {
                let unbias = if batch > 1 {
                    batch as f64 / (batch - 1) as f64
                } else {
                    1.0
                };
                for k in 0..p.gamma.len() {
                    p.running_mean[k] = (1.0 - BN_MOMENTUM) * p.running_mean[k] + BN_MOMENTUM * c.mean[k];
                    p.running_var[k] =
                        (1.0 - BN_MOMENTUM) * p.running_var[k] + BN_MOMENTUM * c.var[k] * unbias;
                }
            }
        }
    }
}

/// Gradient w.r.t. the layer weights, one matrix per layer shaped like `W_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradVec {
    pub layers: Vec<Matrix>,
}

impl GradVec {
    pub fn zeros_like(arch: &Architecture) -> Self {
        Self {
            layers: (0..arch.num_layers())
                .map(|l| {
                    let (r, c) = arch.weight_shape(l);
                    Matrix::zeros(r, c)
                })
                .collect(),
        }
    }

    /// Column-stacks each layer and concatenates in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|m| m.to_col_vec()).collect()
    }

    pub fn unflatten(arch: &Architecture, v: &[f64]) -> Result<Self> {
        if v.len() != arch.num_params() {
            return Err(Error::dim(
                "GradVec::unflatten",
                format!("expected {} values, got {}", arch.num_params(), v.len()),
            ));
        }
        let layers = arch
            .layer_extents()
            .into_iter()
            .enumerate()
            .map(|(l, (off, n))| {
                let (r, c) = arch.weight_shape(l);
                Matrix::from_col_vec(r, c, &v[off..off + n])
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Result of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Minibatch-mean gradient of the weights.
    pub weights: GradVec,
    /// Gradients of BN scale and shift, kept outside θ.
    pub bn: Vec<Option<BnGrad>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and record them.
    Train,
    /// Normalize with running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub x_hat: Matrix,
    pub mode: BnMode,
}

/// Everything one forward/backward pair needs, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCache {
    /// `ā_{i−1}`: layer input with a trailing row of ones, `(d_{i−1}+1) × B`.
    pub a_bar: Vec<Matrix>,
    /// Pre-activations `s_i = W_i ā_{i−1}`, before batch normalization.
    pub s: Vec<Matrix>,
    /// Inputs to the activation (after batch normalization where present).
    pub z: Vec<Matrix>,
    /// Per-sample `g_i = 𝒟s_i` scaled by `B`; empty until [`backward`] runs.
    pub g: Vec<Matrix>,
    pub bn: Vec<Option<BnCache>>,
}

impl BatchCache {
    pub fn batch_size(&self) -> usize {
        self.a_bar.first().map_or(0, |a| a.cols())
    }

    pub fn output(&self) -> &Matrix {
        self.z.last().expect("cache has at least one layer")
    }
}

fn append_ones(a: &Matrix) -> Matrix {
    let (r, b) = a.shape();
    Matrix::from_fn(r + 1, b, |i, j| if i < r { a[(i, j)] } else { 1.0 })
}

/// Runs the network on the columns of `x` (`d_0 × B`).
pub fn forward(arch: &Architecture, params: &Params, x: &Matrix, mode: BnMode) -> Result<(Matrix, BatchCache)> {
    params.check(arch)?;
    if x.rows() != arch.input_dim() {
        return Err(Error::dim(
            "forward",
            format!("input has {} rows, network expects {}", x.rows(), arch.input_dim()),
        ));
    }
    if x.cols() == 0 {
        return Err(Error::dim("forward", "empty batch"));
    }
    let l_count = arch.num_layers();
    let batch = x.cols();
    let mut cache = BatchCache {
        a_bar: Vec::with_capacity(l_count),
        s: Vec::with_capacity(l_count),
        z: Vec::with_capacity(l_count),
        g: Vec::new(),
        bn: Vec::with_capacity(l_count),
    };
    let mut a = x.clone();
    for l in 0..l_count {
        let a_bar = append_ones(&a);
        let s = params.weights[l].matmul(&a_bar)?;
        let (z, bn_cache) = match &params.bn[l] {
            Some(p) => {
                let width = s.rows();
                let (mean, var) = match mode {
                    BnMode::Train => {
                        let mut mean = vec![0.0; width];
                        let mut var = vec![0.0; width];
                        for k in 0..width {
                            let row = s.row(k);
                            let m = row.iter().sum::<f64>() / batch as f64;
                            mean[k] = m;
                            var[k] = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / batch as f64;
                        }
                        (mean, var)
                    }
                    BnMode::Eval => (p.running_mean.clone(), p.running_var.clone()),
                };
                let x_hat = Matrix::from_fn(width, batch, |k, b| {
                    (s[(k, b)] - mean[k]) / (var[k] + BN_EPS).sqrt()
                });
                let z = Matrix::from_fn(width, batch, |k, b| p.gamma[k] * x_hat[(k, b)] + p.beta[k]);
                (
                    z,
                    Some(BnCache {
                        mean,
                        var,
                        x_hat,
                        mode,
                    }),
                )
            }
            None => (s.clone(), None),
        };
        let act = arch.activation(l);
        a = z.map(|v| act.apply(v));
        cache.a_bar.push(a_bar);
        cache.s.push(s);
        cache.z.push(z);
        cache.bn.push(bn_cache);
    }
    Ok((a, cache))
}

fn check_targets(arch: &Architecture, output: &Matrix, y: &Matrix) -> Result<()> {
    let expected_rows = match arch.loss() {
        LossKind::Mse => arch.output_dim(),
        _ => 1,
    };
    if y.rows() != expected_rows || y.cols() != output.cols() {
        return Err(Error::dim(
            "targets",
            format!(
                "expected {expected_rows}x{}, got {}x{}",
                output.cols(),
                y.rows(),
                y.cols()
            ),
        ));
    }
    match arch.loss() {
        LossKind::BernoulliLogit => {
            if let Some(&v) = y.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Input(format!("bernoulli label {v} is not 0 or 1")));
            }
        }
        LossKind::SoftmaxCe => {
            let k = arch.output_dim() as f64;
            if let Some(&v) = y
                .as_slice()
                .iter()
                .find(|&&v| v < 0.0 || v >= k || v.fract() != 0.0)
            {
                return Err(Error::Input(format!(
                    "class index {v} is invalid for {} classes",
                    arch.output_dim()
                )));
            }
        }
        LossKind::Mse => {}
    }
    Ok(())
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(col: &[f64]) -> f64 {
    let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `y` under the output distribution.
pub fn loss(arch: &Architecture, output: &Matrix, y: &Matrix) -> Result<f64> {
    check_targets(arch, output, y)?;
    let batch = output.cols();
    let total: f64 = (0..batch)
        .map(|b| match arch.loss() {
            LossKind::BernoulliLogit => {
                let z = output[(0, b)];
                softplus(z) - y[(0, b)] * z
            }
            LossKind::SoftmaxCe => {
                let col = output.column(b);
                log_sum_exp(&col) - col[y[(0, b)] as usize]
            }
            LossKind::Mse => (0..output.rows())
                .map(|k| {
                    let r = output[(k, b)] - y[(k, b)];
                    0.5 * r * r
                })
                .sum(),
        })
        .sum();
    Ok(total / batch as f64)
}

/// Fraction of correctly classified samples; `None` for regression losses.
pub fn accuracy(arch: &Architecture, output: &Matrix, y: &Matrix) -> Option<f64> {
    let batch = output.cols();
    let correct = match arch.loss() {
        LossKind::BernoulliLogit => (0..batch)
            .filter(|&b| (output[(0, b)] > 0.0) == (y[(0, b)] == 1.0))
            .count(),
        LossKind::SoftmaxCe => (0..batch)
            .filter(|&b| {
                let col = output.column(b);
                let arg = (0..col.len()).max_by(|&i, &j| col[i].total_cmp(&col[j])).unwrap_or(0);
                arg as f64 == y[(0, b)]
            })
            .count(),
        LossKind::Mse => return None,
    };
    Some(correct as f64 / batch as f64)
}

/// Per-sample derivative of the per-sample loss w.r.t. the output.
fn output_delta(arch: &Architecture, output: &Matrix, y: &Matrix) -> Matrix {
    let (rows, batch) = output.shape();
    match arch.loss() {
        LossKind::BernoulliLogit => Matrix::from_fn(1, batch, |_, b| sigmoid(output[(0, b)]) - y[(0, b)]),
        LossKind::SoftmaxCe => {
            let mut d = Matrix::zeros(rows, batch);
            for b in 0..batch {
                let col = output.column(b);
                let lse = log_sum_exp(&col);
                for k in 0..rows {
                    d[(k, b)] = (col[k] - lse).exp();
                }
                d[(y[(0, b)] as usize, b)] -= 1.0;
            }
            d
        }
        LossKind::Mse => Matrix::from_fn(rows, batch, |k, b| output[(k, b)] - y[(k, b)]),
    }
}

/// Draws one label per column from the model's predictive distribution.
pub fn sample_labels<R: Rng + ?Sized>(arch: &Architecture, output: &Matrix, rng: &mut R) -> Matrix {
    let (rows, batch) = output.shape();
    match arch.loss() {
        LossKind::BernoulliLogit => Matrix::from_fn(1, batch, |_, b| {
            let p = sigmoid(output[(0, b)]);
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }),
        LossKind::SoftmaxCe => Matrix::from_fn(1, batch, |_, b| {
            let col = output.column(b);
            let lse = log_sum_exp(&col);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, &z) in col.iter().enumerate() {
                acc += (z - lse).exp();
                if u < acc {
                    return k as f64;
                }
            }
            (rows - 1) as f64
        }),
        LossKind::Mse => Matrix::from_fn(rows, batch, |k, b| {
            let e: f64 = StandardNormal.sample(rng);
            output[(k, b)] + e
        }),
    }
}

/// Exact backpropagation of the mean loss against targets `y`.
///
/// Overwrites `cache.g` with the per-sample derivatives of this pass.
pub fn backward(arch: &Architecture, params: &Params, cache: &mut BatchCache, y: &Matrix) -> Result<Gradients> {
    params.check(arch)?;
    let l_count = arch.num_layers();
    if cache.a_bar.len() != l_count || cache.z.len() != l_count || cache.bn.len() != l_count {
        return Err(Error::State(format!(
            "cache holds {} layers, architecture has {l_count}",
            cache.a_bar.len()
        )));
    }
    for l in 0..l_count {
        let (r, c) = arch.weight_shape(l);
        if cache.a_bar[l].rows() != c || cache.z[l].rows() != r {
            return Err(Error::State(format!("cache layer {l} does not match the architecture")));
        }
        if cache.bn[l].is_some() != params.bn[l].is_some() {
            return Err(Error::State(format!("cache layer {l} batch-norm state does not match params")));
        }
    }
    let batch = cache.batch_size();
    let output = cache.output().clone();
    check_targets(arch, &output, y)?;

    let inv_b = 1.0 / batch as f64;
    let mut g_layers = vec![Matrix::zeros(0, 0); l_count];
    let mut w_grads = vec![Matrix::zeros(0, 0); l_count];
    let mut bn_grads: Vec<Option<BnGrad>> = vec![None; l_count];

    // delta holds B · ∂L/∂z for the current layer.
    let mut delta = output_delta(arch, &output, y);
    for l in (0..l_count).rev() {
        let g = match (&cache.bn[l], &params.bn[l]) {
            (Some(c), Some(p)) => {
                let width = delta.rows();
                let mut gamma_g = vec![0.0; width];
                let mut beta_g = vec![0.0; width];
                let mut g = Matrix::zeros(width, batch);
                for k in 0..width {
                    let d = delta.row(k);
                    let xh = c.x_hat.row(k);
                    let sum_d: f64 = d.iter().sum();
                    let sum_dx: f64 = d.iter().zip(xh).map(|(a, b)| a * b).sum();
                    gamma_g[k] = sum_dx * inv_b;
                    beta_g[k] = sum_d * inv_b;
                    let inv_std = 1.0 / (c.var[k] + BN_EPS).sqrt();
                    let row = g.row_mut(k);
                    match c.mode {
                        BnMode::Train => {
                            let mean_d = sum_d * inv_b;
                            let mean_dx = sum_dx * inv_b;
                            for b in 0..batch {
                                row[b] = p.gamma[k] * inv_std * (d[b] - mean_d - xh[b] * mean_dx);
                            }
                        }
                        BnMode::Eval => {
                            for b in 0..batch {
                                row[b] = p.gamma[k] * inv_std * d[b];
                            }
                        }
                    }
                }
                bn_grads[l] = Some(BnGrad {
                    gamma: gamma_g,
                    beta: beta_g,
                });
                g
            }
            _ => delta,
        };

        w_grads[l] = g.matmul_transpose(&cache.a_bar[l])?.scale(inv_b);
        if l > 0 {
            let back = params.weights[l].transpose_matmul(&g)?;
            let prev_act = arch.activation(l - 1);
            let z_prev = &cache.z[l - 1];
            delta = Matrix::from_fn(z_prev.rows(), batch, |k, b| {
                back[(k, b)] * prev_act.derivative(z_prev[(k, b)])
            });
        } else {
            delta = Matrix::zeros(0, 0);
        }
        g_layers[l] = g;
    }
    cache.g = g_layers;
    Ok(Gradients {
        weights: GradVec { layers: w_grads },
        bn: bn_grads,
    })
}
