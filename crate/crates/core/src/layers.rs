//! Differentiable layer primitives with explicit forward and backward passes.
//!
//! Every forward that needs state for its backward returns that state to the
//! caller instead of stashing it inside the layer. A backward pass given no
//! cache (because the forward ran in evaluation mode) is an error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::matrix::DenseMatrix;

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

pub fn linear_forward(input: &DenseMatrix, weight: &DenseMatrix) -> Result<DenseMatrix> {
    input.matmul(weight)
}

/// Returns `(grad_input, grad_weight)`.
pub fn linear_backward(
    input: &DenseMatrix,
    weight: &DenseMatrix,
    upstream: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let grad_weight = input.matmul_tn(upstream)?;
    let grad_input = upstream.matmul_nt(weight)?;
    Ok((grad_input, grad_weight))
}

/// Weight gradient only, for layers whose input is data rather than an activation.
pub fn linear_backward_weight(input: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    input.matmul_tn(upstream)
}

pub fn relu(input: &DenseMatrix) -> DenseMatrix {
    input.map(|x| x.max(0.0))
}

/// Passes gradient where the pre-activation was strictly positive.
pub fn relu_backward(upstream: &DenseMatrix, pre_activation: &DenseMatrix) -> Result<DenseMatrix> {
    if upstream.shape() != pre_activation.shape() {
        return Err(TgsError::Shape("relu_backward".into()));
    }
    let data =
        upstream.data().iter().zip(pre_activation.data()).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
    DenseMatrix::from_vec(upstream.rows(), upstream.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_matrix(input: &DenseMatrix) -> DenseMatrix {
    input.map(sigmoid)
}

/// Softmax of one row, shifted by the row max.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax_rows(input: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(input.rows(), input.cols());
    for i in 0..input.rows() {
        softmax_into(input.row(i), out.row_mut(i));
    }
    out
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward_into(probs: &[f64], upstream: &[f64], out: &mut [f64]) {
    let inner: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(probs).zip(upstream) {
        *o = p * (g - inner);
    }
}

/// Log-sum-exp of a row, shifted by the row max.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-feature normalization state of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self::with_hyper(features, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPSILON)
    }

    pub fn with_hyper(features: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            scale: vec![1.0; features],
            shift: vec![0.0; features],
            momentum,
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.scale.len()
    }
}

/// What the batch-norm backward pass needs from its forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: DenseMatrix,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// In training mode normalizes by batch statistics (biased variance) and folds
/// them into the running estimates (unbiased variance, as is conventional).
/// In evaluation mode uses the running estimates and returns no cache.
pub fn batchnorm_forward(
    input: &DenseMatrix,
    state: &mut BatchNormState,
    training: bool,
) -> Result<(DenseMatrix, Option<BatchNormCache>)> {
    let (n, f) = input.shape();
    if f != state.features() {
        return Err(TgsError::Shape(format!("batch norm over {} features given {f} columns", state.features())));
    }
    if n == 0 {
        return Err(TgsError::InvalidArgument("batch norm over an empty batch".into()));
    }
    let (mean, var) = if training {
        let mean: Vec<f64> = input.sum_rows().into_iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; f];
        for i in 0..n {
            for ((v, &x), &m) in var.iter_mut().zip(input.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();

    let mut normalized = DenseMatrix::zeros(n, f);
    let mut out = DenseMatrix::zeros(n, f);
    for i in 0..n {
        let x = input.row(i);
        let xn = normalized.row_mut(i);
        for c in 0..f {
            xn[c] = (x[c] - mean[c]) * inv_std[c];
        }
        let o = out.row_mut(i);
        for c in 0..f {
            o[c] = state.scale[c] * xn[c] + state.shift[c];
        }
    }

    if !training {
        return Ok((out, None));
    }
    let m = state.momentum;
    let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    for c in 0..f {
        state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
        state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c] * unbias;
    }
    Ok((out, Some(BatchNormCache { normalized, batch_mean: mean, batch_var: var, inv_std })))
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batchnorm_backward(
    upstream: &DenseMatrix,
    cache: Option<&BatchNormCache>,
    state: &BatchNormState,
) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
    let cache = cache.ok_or(TgsError::MissingCache("batch norm"))?;
    let (n, f) = upstream.shape();
    if cache.normalized.shape() != (n, f) {
        return Err(TgsError::Shape("batchnorm_backward".into()));
    }
    let mut grad_scale = vec![0.0; f];
    let grad_shift = upstream.sum_rows();
    // Σ_rows dx̂ and Σ_rows dx̂·x̂ per feature, where dx̂ = upstream·scale.
    let mut sum_dxn = vec![0.0; f];
    let mut sum_dxn_xn = vec![0.0; f];
    for i in 0..n {
        let g = upstream.row(i);
        let xn = cache.normalized.row(i);
        for c in 0..f {
            grad_scale[c] += g[c] * xn[c];
            let dxn = g[c] * state.scale[c];
            sum_dxn[c] += dxn;
            sum_dxn_xn[c] += dxn * xn[c];
        }
    }
    let nf = n as f64;
    let mut grad_input = DenseMatrix::zeros(n, f);
    for i in 0..n {
        let g = upstream.row(i);
        let xn = cache.normalized.row(i);
        let out = grad_input.row_mut(i);
        for c in 0..f {
            let dxn = g[c] * state.scale[c];
            out[c] = cache.inv_std[c] / nf * (nf * dxn - sum_dxn[c] - xn[c] * sum_dxn_xn[c]);
        }
    }
    Ok((grad_input, grad_scale, grad_shift))
}

/// Inverted dropout. Returns the output and the multiplicative mask, whose
/// entries are `0` or `1/(1-p)` in training mode and all ones otherwise.
pub fn dropout_forward<R: Rng + ?Sized>(
    input: &DenseMatrix,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<(DenseMatrix, Vec<f64>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(TgsError::InvalidArgument(format!("dropout probability {p} outside [0, 1)")));
    }
    let len = input.data().len();
    if !training || p == 0.0 {
        return Ok((input.clone(), vec![1.0; len]));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((DenseMatrix::from_vec(input.rows(), input.cols(), data)?, mask))
}

pub fn dropout_backward(upstream: &DenseMatrix, mask: &[f64]) -> Result<DenseMatrix> {
    if mask.len() != upstream.data().len() {
        return Err(TgsError::Shape("dropout mask".into()));
    }
    let data = upstream.data().iter().zip(mask).map(|(g, m)| g * m).collect();
    DenseMatrix::from_vec(upstream.rows(), upstream.cols(), data)
}

/// Squared Euclidean distance between matching rows.
pub fn mse_rowpair(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(TgsError::Shape(format!("mse_rowpair: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok((0..a.rows()).map(|i| squared_distance(a.row(i), b.row(i))).collect())
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean cross-entropy of softmax(logits) against integer labels, and its
/// gradient with respect to the logits, `(softmax − one_hot) / n`.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(TgsError::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(TgsError::InvalidArgument("cross entropy over zero rows".into()));
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(TgsError::LabelOutOfRange { label: y, classes: c });
        }
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[y];
        grad.row_mut(i)[y] -= 1.0;
    }
    grad.scale_in_place(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}

/// Cross-entropy of a single logit row, `log Σ exp(z) − z_y`.
#[inline]
pub fn cross_entropy_row(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Forward state of one backbone block, kept for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Block input; `None` when the caller keeps it (sparse raw features).
    pub input: Option<DenseMatrix>,
    pub pre_activation: DenseMatrix,
    pub batchnorm: BatchNormCache,
    pub dropout_mask: Vec<f64>,
}

/// Everything after the linear map: `Dropout(BN(ReLU(pre)))`.
pub fn activation_forward<R: Rng + ?Sized>(
    pre: DenseMatrix,
    bn: &mut BatchNormState,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<(DenseMatrix, Option<LayerCache>)> {
    let act = relu(&pre);
    let (normed, bn_cache) = batchnorm_forward(&act, bn, training)?;
    let (out, mask) = dropout_forward(&normed, dropout, rng, training)?;
    out.ensure_finite("backbone block output")?;
    let cache =
        bn_cache.map(|batchnorm| LayerCache { input: None, pre_activation: pre, batchnorm, dropout_mask: mask });
    Ok((out, cache))
}

/// Evaluation-mode activation: running statistics, no dropout, no state change.
pub fn activation_infer(pre: &DenseMatrix, bn: &BatchNormState) -> Result<DenseMatrix> {
    let mut frozen = bn.clone();
    let (out, _) = batchnorm_forward(&relu(pre), &mut frozen, false)?;
    Ok(out)
}

/// Reverse of [`activation_forward`]. Returns `(grad_pre, grad_scale, grad_shift)`.
pub fn activation_backward(
    upstream: &DenseMatrix,
    cache: Option<&LayerCache>,
    bn: &BatchNormState,
) -> Result<(DenseMatrix, Vec<f64>, Vec<f64>)> {
    let cache = cache.ok_or(TgsError::MissingCache("backbone block"))?;
    let d_normed = dropout_backward(upstream, &cache.dropout_mask)?;
    let (d_act, scale, shift) = batchnorm_backward(&d_normed, Some(&cache.batchnorm), bn)?;
    Ok((relu_backward(&d_act, &cache.pre_activation)?, scale, shift))
}

/// One backbone block: `Dropout(BN(ReLU(input · weight)))`.
///
/// Returns the block output and, in training mode, its cache.
pub fn block_forward<R: Rng + ?Sized>(
    input: &DenseMatrix,
    weight: &DenseMatrix,
    bn: &mut BatchNormState,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<(DenseMatrix, Option<LayerCache>)> {
    let pre = linear_forward(input, weight)?;
    let (out, cache) = activation_forward(pre, bn, dropout, rng, training)?;
    Ok((out, cache.map(|c| LayerCache { input: Some(input.clone()), ..c })))
}

/// Gradients of one backbone block.
#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub input: Option<DenseMatrix>,
    pub weight: DenseMatrix,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
}

/// Reverse pass of [`block_forward`]. The input gradient is skipped when
/// `need_input_grad` is false.
pub fn block_backward(
    upstream: &DenseMatrix,
    cache: Option<&LayerCache>,
    weight: &DenseMatrix,
    bn: &BatchNormState,
    need_input_grad: bool,
) -> Result<BlockGrads> {
    let (d_pre, bn_scale, bn_shift) = activation_backward(upstream, cache, bn)?;
    let input = cache.and_then(|c| c.input.as_ref()).ok_or(TgsError::MissingCache("backbone block input"))?;
    let weight_grad = linear_backward_weight(input, &d_pre)?;
    let input_grad = if need_input_grad { Some(d_pre.matmul_nt(weight)?) } else { None };
    Ok(BlockGrads { input: input_grad, weight: weight_grad, bn_scale, bn_shift })
}
