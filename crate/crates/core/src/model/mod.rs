//! The TGS network: an MLP backbone, two linear heads and a learned mixup
//! coefficient, together with the batch and full-graph training losses.

mod loss;
mod oracle;

pub use loss::{compute_loss, CeTerm, HeadKind, LossBreakdown, LossOptions, LossPlan, PairTerm};
pub use oracle::{full_graph_loss, FullGraphLoss};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, TgsError};
use crate::layers::{
    activation_backward, activation_forward, activation_infer, block_backward, block_forward, sigmoid, softmax_rows,
    BatchNormState, LayerCache,
};
use crate::matrix::{dot, DenseMatrix};
use crate::optim::Parameters;
use crate::sparse::SparseMatrix;

pub const CHECKPOINT_KIND: &str = "tgs";

/// Row-major node features the model can multiply against.
pub trait FeatureRows {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// `self · w`
    fn times(&self, w: &DenseMatrix) -> Result<DenseMatrix>;
    /// `selfᵀ · up`
    fn transpose_times(&self, up: &DenseMatrix) -> Result<DenseMatrix>;
}

impl FeatureRows for DenseMatrix {
    fn n_rows(&self) -> usize {
        self.rows()
    }
    fn n_cols(&self) -> usize {
        self.cols()
    }
    fn times(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul(w)
    }
    fn transpose_times(&self, up: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul_tn(up)
    }
}

impl FeatureRows for SparseMatrix {
    fn n_rows(&self) -> usize {
        self.rows()
    }
    fn n_cols(&self) -> usize {
        self.cols()
    }
    fn times(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul(w)
    }
    fn transpose_times(&self, up: &DenseMatrix) -> Result<DenseMatrix> {
        self.matmul_tn(up)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: usize,
}

/// A single linear layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn forward(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = h.matmul(&self.weight)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }

    pub fn forward_row(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (k, &x) in h.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weight.row(k)) {
                *o += x * w;
            }
        }
        out
    }
}

/// All trainable parameters plus the batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TgsParams {
    /// `W^(0)` is `d×F`, the rest `F×F`.
    pub layers: Vec<DenseMatrix>,
    pub batchnorms: Vec<BatchNormState>,
    pub head_f: Head,
    pub head_g: Head,
    /// `W_m`, `d×F`.
    pub mixup_proj: DenseMatrix,
    /// `a`, length `2F`: the first half scores the anchor, the second the neighbor.
    pub attention: Vec<f64>,
}

pub(crate) fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit))
}

impl TgsParams {
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let ModelDims { input, hidden, classes, layers } = dims;
        if input == 0 || hidden == 0 || classes == 0 || layers == 0 {
            return Err(TgsError::InvalidArgument(format!("degenerate model dimensions {dims:?}")));
        }
        let mut ws = Vec::with_capacity(layers);
        for l in 0..layers {
            ws.push(glorot(if l == 0 { input } else { hidden }, hidden, rng));
        }
        let head_f = Head { weight: glorot(hidden, classes, rng), bias: vec![0.0; classes] };
        let head_g = Head { weight: glorot(hidden, classes, rng), bias: vec![0.0; classes] };
        let mixup_proj = glorot(input, hidden, rng);
        let limit = (6.0 / (2 * hidden + 1) as f64).sqrt();
        let attention = (0..2 * hidden).map(|_| rng.gen_range(-limit..limit)).collect();
        Ok(Self {
            layers: ws,
            batchnorms: (0..layers).map(|_| BatchNormState::new(hidden)).collect(),
            head_f,
            head_g,
            mixup_proj,
            attention,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.layers[0].rows(),
            hidden: self.layers[0].cols(),
            classes: self.head_f.bias.len(),
            layers: self.layers.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn zero_grads(&self) -> TgsGrads {
        TgsGrads {
            layers: self.layers.iter().map(|w| DenseMatrix::zeros(w.rows(), w.cols())).collect(),
            bn_scale: self.batchnorms.iter().map(|b| vec![0.0; b.features()]).collect(),
            bn_shift: self.batchnorms.iter().map(|b| vec![0.0; b.features()]).collect(),
            f_weight: DenseMatrix::zeros(self.head_f.weight.rows(), self.head_f.weight.cols()),
            f_bias: vec![0.0; self.head_f.bias.len()],
            g_weight: DenseMatrix::zeros(self.head_g.weight.rows(), self.head_g.weight.cols()),
            g_bias: vec![0.0; self.head_g.bias.len()],
            mixup_proj: DenseMatrix::zeros(self.mixup_proj.rows(), self.mixup_proj.cols()),
            attention: vec![0.0; self.attention.len()],
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(CHECKPOINT_KIND);
        for (l, (w, bn)) in self.layers.iter().zip(&self.batchnorms).enumerate() {
            c.push(format!("layer{l}.weight"), w.clone());
            c.push_vec(format!("bn{l}.scale"), &bn.scale);
            c.push_vec(format!("bn{l}.shift"), &bn.shift);
            c.push_vec(format!("bn{l}.running_mean"), &bn.running_mean);
            c.push_vec(format!("bn{l}.running_var"), &bn.running_var);
            c.push_vec(format!("bn{l}.hyper"), &[bn.momentum, bn.epsilon]);
        }
        c.push("head_f.weight", self.head_f.weight.clone());
        c.push_vec("head_f.bias", &self.head_f.bias);
        c.push("head_g.weight", self.head_g.weight.clone());
        c.push_vec("head_g.bias", &self.head_g.bias);
        c.push("mixup.weight", self.mixup_proj.clone());
        c.push_vec("mixup.attention", &self.attention);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind(CHECKPOINT_KIND)?;
        let mut layers = Vec::new();
        let mut batchnorms = Vec::new();
        let mut l = 0;
        while let Ok(w) = c.get(&format!("layer{l}.weight")) {
            let hyper = c.get_vec(&format!("bn{l}.hyper"))?;
            if hyper.len() != 2 {
                return Err(TgsError::Checkpoint(format!("bn{l}.hyper must hold two values")));
            }
            let mut bn = BatchNormState::with_hyper(w.cols(), hyper[0], hyper[1]);
            bn.scale = c.get_vec(&format!("bn{l}.scale"))?;
            bn.shift = c.get_vec(&format!("bn{l}.shift"))?;
            bn.running_mean = c.get_vec(&format!("bn{l}.running_mean"))?;
            bn.running_var = c.get_vec(&format!("bn{l}.running_var"))?;
            layers.push(w.clone());
            batchnorms.push(bn);
            l += 1;
        }
        if layers.is_empty() {
            return Err(TgsError::Checkpoint("no backbone layers".into()));
        }
        let p = Self {
            layers,
            batchnorms,
            head_f: Head { weight: c.get("head_f.weight")?.clone(), bias: c.get_vec("head_f.bias")? },
            head_g: Head { weight: c.get("head_g.weight")?.clone(), bias: c.get_vec("head_g.bias")? },
            mixup_proj: c.get("mixup.weight")?.clone(),
            attention: c.get_vec("mixup.attention")?,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let ModelDims { input, hidden, classes, .. } = self.dims();
        let bad = |what: &str| Err(TgsError::Shape(format!("inconsistent parameter shapes: {what}")));
        for (l, (w, bn)) in self.layers.iter().zip(&self.batchnorms).enumerate() {
            let expect = (if l == 0 { input } else { hidden }, hidden);
            if w.shape() != expect {
                return bad(&format!("layer{l}"));
            }
            let f = bn.features();
            if [bn.running_mean.len(), bn.running_var.len(), bn.shift.len()].iter().any(|&n| n != f) || f != hidden {
                return bad(&format!("bn{l}"));
            }
        }
        for h in [&self.head_f, &self.head_g] {
            if h.weight.shape() != (hidden, classes) || h.bias.len() != classes {
                return bad("head");
            }
        }
        if self.mixup_proj.shape() != (input, hidden) || self.attention.len() != 2 * hidden {
            return bad("mixup");
        }
        Ok(())
    }
}

impl Parameters for TgsParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, (w, bn)) in self.layers.iter().zip(&self.batchnorms).enumerate() {
            out.push((format!("layer{l}.weight"), w.data()));
            out.push((format!("bn{l}.scale"), &bn.scale));
            out.push((format!("bn{l}.shift"), &bn.shift));
        }
        out.push(("head_f.weight".into(), self.head_f.weight.data()));
        out.push(("head_f.bias".into(), &self.head_f.bias));
        out.push(("head_g.weight".into(), self.head_g.weight.data()));
        out.push(("head_g.bias".into(), &self.head_g.bias));
        out.push(("mixup.weight".into(), self.mixup_proj.data()));
        out.push(("mixup.attention".into(), &self.attention));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (l, (w, bn)) in self.layers.iter_mut().zip(self.batchnorms.iter_mut()).enumerate() {
            out.push((format!("layer{l}.weight"), w.data_mut()));
            out.push((format!("bn{l}.scale"), &mut bn.scale));
            out.push((format!("bn{l}.shift"), &mut bn.shift));
        }
        out.push(("head_f.weight".into(), self.head_f.weight.data_mut()));
        out.push(("head_f.bias".into(), &mut self.head_f.bias));
        out.push(("head_g.weight".into(), self.head_g.weight.data_mut()));
        out.push(("head_g.bias".into(), &mut self.head_g.bias));
        out.push(("mixup.weight".into(), self.mixup_proj.data_mut()));
        out.push(("mixup.attention".into(), &mut self.attention));
        out
    }
}

/// Gradients of every trainable tensor, listed in the same order as
/// [`TgsParams`] lists them.
#[derive(Debug, Clone, PartialEq)]
pub struct TgsGrads {
    pub layers: Vec<DenseMatrix>,
    pub bn_scale: Vec<Vec<f64>>,
    pub bn_shift: Vec<Vec<f64>>,
    pub f_weight: DenseMatrix,
    pub f_bias: Vec<f64>,
    pub g_weight: DenseMatrix,
    pub g_bias: Vec<f64>,
    pub mixup_proj: DenseMatrix,
    pub attention: Vec<f64>,
}

impl Parameters for TgsGrads {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for l in 0..self.layers.len() {
            out.push((format!("layer{l}.weight"), self.layers[l].data()));
            out.push((format!("bn{l}.scale"), &self.bn_scale[l]));
            out.push((format!("bn{l}.shift"), &self.bn_shift[l]));
        }
        out.push(("head_f.weight".into(), self.f_weight.data()));
        out.push(("head_f.bias".into(), &self.f_bias));
        out.push(("head_g.weight".into(), self.g_weight.data()));
        out.push(("head_g.bias".into(), &self.g_bias));
        out.push(("mixup.weight".into(), self.mixup_proj.data()));
        out.push(("mixup.attention".into(), &self.attention));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for ((l, w), (s, t)) in
            self.layers.iter_mut().enumerate().zip(self.bn_scale.iter_mut().zip(self.bn_shift.iter_mut()))
        {
            out.push((format!("layer{l}.weight"), w.data_mut()));
            out.push((format!("bn{l}.scale"), s));
            out.push((format!("bn{l}.shift"), t));
        }
        out.push(("head_f.weight".into(), self.f_weight.data_mut()));
        out.push(("head_f.bias".into(), &mut self.f_bias));
        out.push(("head_g.weight".into(), self.g_weight.data_mut()));
        out.push(("head_g.bias".into(), &mut self.g_bias));
        out.push(("mixup.weight".into(), self.mixup_proj.data_mut()));
        out.push(("mixup.attention".into(), &mut self.attention));
        out
    }
}

/// Backbone output and, in training mode, the per-layer caches.
pub struct BackboneOutput {
    pub embeddings: DenseMatrix,
    pub caches: Option<Vec<LayerCache>>,
}

/// `H^(l+1) = Dropout(BN(ReLU(H^(l) W^(l))))` for every layer, starting from
/// the feature rows `x`. Training mode uses batch statistics over these rows,
/// updates the running statistics and samples dropout masks from `rng`.
pub fn backbone_forward<X: FeatureRows, R: Rng + ?Sized>(
    params: &mut TgsParams,
    x: &X,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<BackboneOutput> {
    if x.n_cols() != params.layers[0].rows() {
        return Err(TgsError::Shape(format!(
            "feature width {} but the model expects {}",
            x.n_cols(),
            params.layers[0].rows()
        )));
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    let pre = x.times(&params.layers[0])?;
    let (mut h, cache) = activation_forward(pre, &mut params.batchnorms[0], dropout, rng, training)?;
    caches.push(cache);
    for l in 1..params.layers.len() {
        let (out, cache) = block_forward(&h, &params.layers[l], &mut params.batchnorms[l], dropout, rng, training)?;
        h = out;
        caches.push(cache);
    }
    let caches = if training { Some(caches.into_iter().map(|c| c.expect("training cache")).collect()) } else { None };
    Ok(BackboneOutput { embeddings: h, caches })
}

/// Evaluation-mode backbone; reads the parameters only.
pub fn backbone_eval<X: FeatureRows>(params: &TgsParams, x: &X) -> Result<DenseMatrix> {
    if x.n_cols() != params.layers[0].rows() {
        return Err(TgsError::Shape(format!(
            "feature width {} but the model expects {}",
            x.n_cols(),
            params.layers[0].rows()
        )));
    }
    let mut h = activation_infer(&x.times(&params.layers[0])?, &params.batchnorms[0])?;
    for l in 1..params.layers.len() {
        h = activation_infer(&h.matmul(&params.layers[l])?, &params.batchnorms[l])?;
    }
    Ok(h)
}

/// Reverse pass of [`backbone_forward`], accumulating into `grads`.
pub fn backbone_backward<X: FeatureRows>(
    params: &TgsParams,
    x: &X,
    caches: &[LayerCache],
    upstream: DenseMatrix,
    grads: &mut TgsGrads,
) -> Result<()> {
    let mut d = upstream;
    for l in (1..params.layers.len()).rev() {
        let g = block_backward(&d, caches.get(l), &params.layers[l], &params.batchnorms[l], true)?;
        grads.layers[l].add_assign(&g.weight)?;
        add_into(&mut grads.bn_scale[l], &g.bn_scale);
        add_into(&mut grads.bn_shift[l], &g.bn_shift);
        d = g.input.expect("input gradient requested");
    }
    let (d_pre, scale, shift) = activation_backward(&d, caches.first(), &params.batchnorms[0])?;
    grads.layers[0].add_assign(&x.transpose_times(&d_pre)?)?;
    add_into(&mut grads.bn_scale[0], &scale);
    add_into(&mut grads.bn_shift[0], &shift);
    Ok(())
}

pub(crate) fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// `β = sigmoid(a · [x_i W_m ‖ x_j W_m])` for dense feature rows.
pub fn mixup_coefficient(params: &TgsParams, x_i: &[f64], x_j: &[f64]) -> f64 {
    let f = params.mixup_proj.cols();
    let p_i = project_row(&params.mixup_proj, x_i);
    let p_j = project_row(&params.mixup_proj, x_j);
    sigmoid(dot(&params.attention[..f], &p_i) + dot(&params.attention[f..], &p_j))
}

/// Gradient of β with respect to `(a, W_m)`.
pub fn mixup_coefficient_grad(params: &TgsParams, x_i: &[f64], x_j: &[f64]) -> (f64, Vec<f64>, DenseMatrix) {
    let f = params.mixup_proj.cols();
    let p_i = project_row(&params.mixup_proj, x_i);
    let p_j = project_row(&params.mixup_proj, x_j);
    let beta = sigmoid(dot(&params.attention[..f], &p_i) + dot(&params.attention[f..], &p_j));
    let ds = beta * (1.0 - beta);
    let d_att: Vec<f64> = p_i.iter().chain(&p_j).map(|p| ds * p).collect();
    let d_proj = DenseMatrix::from_fn(params.mixup_proj.rows(), f, |r, c| {
        ds * (x_i[r] * params.attention[c] + x_j[r] * params.attention[f + c])
    });
    (beta, d_att, d_proj)
}

fn project_row(w: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (k, &v) in x.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (o, &wk) in out.iter_mut().zip(w.row(k)) {
            *o += v * wk;
        }
    }
    out
}

/// `z' = g(β h_j + (1 − β) h_i)`
pub fn mixup_head(params: &TgsParams, h_i: &[f64], h_j: &[f64], beta: f64) -> Vec<f64> {
    let mixed: Vec<f64> = h_i.iter().zip(h_j).map(|(a, b)| beta * b + (1.0 - beta) * a).collect();
    params.head_g.forward_row(&mixed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub probs: DenseMatrix,
}

/// Class predictions from feature rows alone: `argmax softmax(f(backbone(x)))`.
/// Head `g` and all graph structure are unused.
pub fn infer<X: FeatureRows>(params: &TgsParams, x: &X) -> Result<Prediction> {
    let logits = logits_f(params, x)?;
    let probs = softmax_rows(&logits);
    Ok(Prediction { classes: probs.argmax_rows(), probs })
}

/// Evaluation-mode `f`-head logits.
pub fn logits_f<X: FeatureRows>(params: &TgsParams, x: &X) -> Result<DenseMatrix> {
    let logits = params.head_f.forward(&backbone_eval(params, x)?)?;
    logits.ensure_finite("head f logits")?;
    Ok(logits)
}
