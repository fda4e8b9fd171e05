//! Feature-level and label-level self-distillation losses with their
//! gradients.
//!
//! A loss is described by a [`LossPlan`]: weighted positive pairs, negative
//! pairs and cross-entropy terms over node ids. Plans are built from a sampled
//! edge batch, from the whole edge set with every non-neighbor enumerated as a
//! negative, or from a plain list of labeled nodes. [`compute_loss`] then
//! forwards the touched rows once and evaluates every term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{add_into, backbone_backward, backbone_forward, FeatureRows, TgsGrads, TgsParams};
use crate::error::{Result, TgsError};
use crate::graph::{Csr, NodeId};
use crate::layers::{cross_entropy_row, sigmoid, softmax_backward_into, softmax_into, softmax_rows};
use crate::matrix::{dot, DenseMatrix};
use crate::sampler::EdgeBatch;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    /// Weight of the feature-level term.
    pub alpha: f64,
    pub dropout: f64,
    pub no_negatives: bool,
    /// Replace `z'_{i,j}` by `g(h_j)`, i.e. `β ≡ 1`.
    pub no_mixup_augment: bool,
    /// Drop the neighbor cross-entropy terms, keeping plain cross-entropy.
    pub no_label_sd: bool,
    /// Compare softmaxed outputs in the positive term as well.
    pub normalize_positive_term: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            dropout: 0.5,
            no_negatives: false,
            no_mixup_augment: false,
            no_label_sd: false,
            normalize_positive_term: false,
        }
    }
}

/// `weight · ‖·‖²` between `anchor` and either the mixup of `anchor` toward
/// `other` (positives) or `other` itself (negatives).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub anchor: NodeId,
    pub other: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    F,
    G,
}

/// `weight · CE(head(node), label)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeTerm {
    pub head: HeadKind,
    pub node: NodeId,
    pub label: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossPlan {
    pub positives: Vec<PairTerm>,
    pub negatives: Vec<PairTerm>,
    pub cross_entropy: Vec<CeTerm>,
}

impl LossPlan {
    /// Losses for one sampled edge batch. The feature term averages over the
    /// batch edges, and the sampled negatives of each endpoint are averaged. The
    /// label term averages over the labeled endpoints of the batch.
    pub fn from_batch(batch: &EdgeBatch, labels: &[usize], train: &[bool], opts: &LossOptions) -> Self {
        let mut plan = Self::default();
        if batch.is_empty() {
            return plan;
        }
        let w = 1.0 / batch.len() as f64;
        plan.push_positives(&batch.edges, w);
        if !opts.no_negatives && batch.per_edge > 0 {
            let wn = w / batch.per_edge as f64;
            for (e, &(i, j)) in batch.edges.iter().enumerate() {
                for &(ki, kj) in batch.negatives_for(e) {
                    plan.negatives.push(PairTerm { anchor: i, other: ki, weight: wn });
                    plan.negatives.push(PairTerm { anchor: j, other: kj, weight: wn });
                }
            }
        }
        plan.push_label_terms(&batch.edges, labels, train, opts.no_label_sd);
        plan
    }

    /// Every edge at once, with the negative expectation of each endpoint `i`
    /// replaced by the exact mean over its `N − |N_i| − 1` non-neighbors.
    pub fn enumerated(adjacency: &Csr, labels: &[usize], train: &[bool], opts: &LossOptions) -> Self {
        let mut plan = Self::default();
        let edges = adjacency.undirected_edges();
        if edges.is_empty() {
            return plan;
        }
        let n = adjacency.n_nodes();
        let w = 1.0 / edges.len() as f64;
        plan.push_positives(&edges, w);
        if !opts.no_negatives {
            for &(i, j) in &edges {
                for anchor in [i, j] {
                    let m = n - adjacency.degree(anchor) - 1;
                    for k in 0..n {
                        if k != anchor && !adjacency.has_edge(anchor, k) {
                            plan.negatives.push(PairTerm { anchor, other: k, weight: w / m as f64 });
                        }
                    }
                }
            }
        }
        plan.push_label_terms(&edges, labels, train, opts.no_label_sd);
        plan
    }

    /// Plain mean cross-entropy of head `f` over `ids`.
    pub fn supervised(ids: &[NodeId], labels: &[usize]) -> Self {
        let w = 1.0 / ids.len().max(1) as f64;
        let cross_entropy =
            ids.iter().map(|&v| CeTerm { head: HeadKind::F, node: v, label: labels[v], weight: w }).collect();
        Self { cross_entropy, ..Self::default() }
    }

    fn push_positives(&mut self, edges: &[(NodeId, NodeId)], w: f64) {
        for &(i, j) in edges {
            self.positives.push(PairTerm { anchor: i, other: j, weight: w });
            self.positives.push(PairTerm { anchor: j, other: i, weight: w });
        }
    }

    fn push_label_terms(&mut self, edges: &[(NodeId, NodeId)], labels: &[usize], train: &[bool], no_sd: bool) {
        let mut labeled: Vec<NodeId> = edges.iter().flat_map(|&(i, j)| [i, j]).filter(|&v| train[v]).collect();
        labeled.sort_unstable();
        labeled.dedup();
        if labeled.is_empty() {
            return;
        }
        let w = 1.0 / labeled.len() as f64;
        for &v in &labeled {
            self.cross_entropy.push(CeTerm { head: HeadKind::F, node: v, label: labels[v], weight: w });
        }
        if no_sd {
            return;
        }
        for &(i, j) in edges {
            if train[i] {
                self.cross_entropy.push(CeTerm { head: HeadKind::G, node: j, label: labels[i], weight: w });
            }
            if train[j] {
                self.cross_entropy.push(CeTerm { head: HeadKind::G, node: i, label: labels[j], weight: w });
            }
        }
    }

    /// Sorted distinct node ids referenced by any term.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .positives
            .iter()
            .chain(&self.negatives)
            .flat_map(|t| [t.anchor, t.other])
            .chain(self.cross_entropy.iter().map(|t| t.node))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Loss values of one evaluation. `feature = positive − negative` and
/// `total = label + α·feature`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub label: f64,
    pub feature: f64,
    pub positive: f64,
    pub negative: f64,
    pub label_self: f64,
    pub label_neighbor: f64,
}

/// Evaluates `plan` on the rows of `features` it touches. In training mode the
/// backbone uses batch statistics and dropout, and the gradient of the total
/// loss with respect to every trainable tensor is returned.
pub fn compute_loss<R: Rng + ?Sized>(
    params: &mut TgsParams,
    features: &SparseMatrix,
    plan: &LossPlan,
    opts: &LossOptions,
    rng: &mut R,
    training: bool,
) -> Result<(LossBreakdown, Option<TgsGrads>)> {
    if opts.alpha < 0.0 || !opts.alpha.is_finite() {
        return Err(TgsError::InvalidArgument(format!("alpha must be finite and non-negative, got {}", opts.alpha)));
    }
    let nodes = plan.nodes();
    if nodes.is_empty() {
        return Ok((LossBreakdown::default(), training.then(|| params.zero_grads())));
    }
    if let Some(&v) = nodes.last().filter(|&&v| v >= features.rows()) {
        return Err(TgsError::NodeOutOfRange { node: v, nodes: features.rows() });
    }
    let idx = |v: NodeId| nodes.binary_search(&v).expect("node listed in plan");
    let rows = features.gather_rows(&nodes);
    let out = backbone_forward(params, &rows, opts.dropout, rng, training)?;
    let params: &TgsParams = params;
    let h = out.embeddings;
    let y = params.head_f.forward(&h)?;
    let z = params.head_g.forward(&h)?;
    let y_hat = softmax_rows(&y);
    let z_hat = softmax_rows(&z);
    let (n_rows, hidden) = h.shape();
    let classes = y.cols();
    let alpha = opts.alpha;

    let mut loss = LossBreakdown::default();
    let mut grads = params.zero_grads();
    let mut d_y = DenseMatrix::zeros(n_rows, classes);
    let mut d_z = DenseMatrix::zeros(n_rows, classes);
    let mut d_y_hat = DenseMatrix::zeros(n_rows, classes);
    let mut d_z_hat = DenseMatrix::zeros(n_rows, classes);
    let mut d_h = DenseMatrix::zeros(n_rows, hidden);

    // Positive pairs: anchor output against g applied to the interpolation.
    let use_mixup = !opts.no_mixup_augment && !plan.positives.is_empty();
    let projected = if use_mixup { Some(rows.times(&params.mixup_proj)?) } else { None };
    let mut d_proj = DenseMatrix::zeros(if use_mixup { n_rows } else { 0 }, hidden);
    let (att_anchor, att_other) = params.attention.split_at(hidden);
    let n_pos = plan.positives.len();
    let mut mixed = DenseMatrix::zeros(n_pos, hidden);
    let mut betas = Vec::with_capacity(n_pos);
    for (t, term) in plan.positives.iter().enumerate() {
        let (a, o) = (idx(term.anchor), idx(term.other));
        let beta = match &projected {
            Some(p) => sigmoid(dot(att_anchor, p.row(a)) + dot(att_other, p.row(o))),
            None => 1.0,
        };
        for ((m, &ha), &ho) in mixed.row_mut(t).iter_mut().zip(h.row(a)).zip(h.row(o)) {
            *m = beta * ho + (1.0 - beta) * ha;
        }
        betas.push(beta);
    }
    if n_pos > 0 {
        let z_mixed = params.head_g.forward(&mixed)?;
        let mut d_zm = DenseMatrix::zeros(n_pos, classes);
        let mut diff = vec![0.0; classes];
        let mut soft = vec![0.0; classes];
        for (t, term) in plan.positives.iter().enumerate() {
            let a = idx(term.anchor);
            if opts.normalize_positive_term {
                softmax_into(z_mixed.row(t), &mut soft);
                for c in 0..classes {
                    diff[c] = y_hat.get(a, c) - soft[c];
                }
            } else {
                for c in 0..classes {
                    diff[c] = y.get(a, c) - z_mixed.get(t, c);
                }
            }
            loss.positive += term.weight * dot(&diff, &diff);
            let g: Vec<f64> = diff.iter().map(|d| 2.0 * alpha * term.weight * d).collect();
            if opts.normalize_positive_term {
                add_into(d_y_hat.row_mut(a), &g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                softmax_backward_into(&soft, &neg, d_zm.row_mut(t));
            } else {
                add_into(d_y.row_mut(a), &g);
                for (dst, x) in d_zm.row_mut(t).iter_mut().zip(&g) {
                    *dst = -x;
                }
            }
        }
        if training {
            grads.g_weight.add_assign(&mixed.matmul_tn(&d_zm)?)?;
            add_into(&mut grads.g_bias, &d_zm.sum_rows());
            let d_mixed = d_zm.matmul_nt(&params.head_g.weight)?;
            for (t, term) in plan.positives.iter().enumerate() {
                let (a, o) = (idx(term.anchor), idx(term.other));
                let beta = betas[t];
                let dm = d_mixed.row(t);
                for (dst, &g) in d_h.row_mut(o).iter_mut().zip(dm) {
                    *dst += beta * g;
                }
                for (dst, &g) in d_h.row_mut(a).iter_mut().zip(dm) {
                    *dst += (1.0 - beta) * g;
                }
                if let Some(p) = &projected {
                    let d_beta: f64 = (0..hidden).map(|c| dm[c] * (h.get(o, c) - h.get(a, c))).sum();
                    let ds = d_beta * beta * (1.0 - beta);
                    for c in 0..hidden {
                        grads.attention[c] += ds * p.get(a, c);
                        grads.attention[hidden + c] += ds * p.get(o, c);
                    }
                    for (dst, &w) in d_proj.row_mut(a).iter_mut().zip(att_anchor) {
                        *dst += ds * w;
                    }
                    for (dst, &w) in d_proj.row_mut(o).iter_mut().zip(att_other) {
                        *dst += ds * w;
                    }
                }
            }
        }
    }

    // Negative pairs on softmaxed outputs.
    for term in &plan.negatives {
        let (a, o) = (idx(term.anchor), idx(term.other));
        let mut sq = 0.0;
        for c in 0..classes {
            let d = y_hat.get(a, c) - z_hat.get(o, c);
            sq += d * d;
            let g = 2.0 * alpha * term.weight * d;
            d_y_hat.row_mut(a)[c] -= g;
            d_z_hat.row_mut(o)[c] += g;
        }
        loss.negative += term.weight * sq;
    }

    for term in &plan.cross_entropy {
        let r = idx(term.node);
        if term.label >= classes {
            return Err(TgsError::LabelOutOfRange { label: term.label, classes });
        }
        let (logits, probs, grad, acc) = match term.head {
            HeadKind::F => (&y, &y_hat, &mut d_y, &mut loss.label_self),
            HeadKind::G => (&z, &z_hat, &mut d_z, &mut loss.label_neighbor),
        };
        *acc += term.weight * cross_entropy_row(logits.row(r), term.label);
        let g = grad.row_mut(r);
        for c in 0..classes {
            g[c] += term.weight * probs.get(r, c);
        }
        g[term.label] -= term.weight;
    }

    loss.feature = loss.positive - loss.negative;
    loss.label = loss.label_self + loss.label_neighbor;
    loss.total = loss.label + alpha * loss.feature;
    if !loss.total.is_finite() {
        return Err(TgsError::NonFinite { what: "loss".into(), row: 0, col: 0 });
    }
    if !training {
        return Ok((loss, None));
    }

    let mut tmp = vec![0.0; classes];
    for r in 0..n_rows {
        softmax_backward_into(y_hat.row(r), d_y_hat.row(r), &mut tmp);
        add_into(d_y.row_mut(r), &tmp);
        softmax_backward_into(z_hat.row(r), d_z_hat.row(r), &mut tmp);
        add_into(d_z.row_mut(r), &tmp);
    }
    grads.f_weight.add_assign(&h.matmul_tn(&d_y)?)?;
    add_into(&mut grads.f_bias, &d_y.sum_rows());
    grads.g_weight.add_assign(&h.matmul_tn(&d_z)?)?;
    add_into(&mut grads.g_bias, &d_z.sum_rows());
    d_h.add_assign(&d_y.matmul_nt(&params.head_f.weight)?)?;
    d_h.add_assign(&d_z.matmul_nt(&params.head_g.weight)?)?;
    let caches = out.caches.ok_or(TgsError::MissingCache("backbone"))?;
    backbone_backward(params, &rows, &caches, d_h, &mut grads)?;
    if use_mixup {
        grads.mixup_proj.add_assign(&rows.transpose_times(&d_proj)?)?;
    }
    Ok((loss, Some(grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (TgsParams, SparseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = TgsParams::init(ModelDims { input: 4, hidden: 3, classes: 3, layers: 2 }, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(n, 4, |_, _| rng.gen_range(-1.0..1.0));
        (p, SparseMatrix::from_dense(&x))
    }

    #[test]
    fn batch_plan_weights() {
        let mut b = EdgeBatch::new(vec![(0, 1), (1, 2)]);
        b.per_edge = 2;
        b.negatives = vec![(3, 3), (2, 0), (0, 0), (3, 1)];
        let labels = [0, 1, 2, 0];
        let train = [true, false, false, false];
        let plan = LossPlan::from_batch(&b, &labels, &train, &LossOptions::default());
        assert_eq!(plan.positives.len(), 4);
        assert!(plan.positives.iter().all(|t| t.weight == 0.5));
        assert_eq!(plan.negatives.len(), 8);
        assert!(plan.negatives.iter().all(|t| t.weight == 0.25));
        // node 0 labeled: CE_f(0) and CE_g(1 -> label 0), both weight 1.
        assert_eq!(plan.cross_entropy.len(), 2);
        assert_eq!(plan.cross_entropy[1], CeTerm { head: HeadKind::G, node: 1, label: 0, weight: 1.0 });
        assert_eq!(plan.nodes(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn no_labeled_endpoint_gives_zero_label_loss() {
        let (mut p, x) = setup(4);
        let b = EdgeBatch::new(vec![(1, 2)]);
        let plan = LossPlan::from_batch(&b, &[0, 1, 2, 0], &[true, false, false, true], &LossOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l, _) = compute_loss(&mut p, &x, &plan, &LossOptions::default(), &mut rng, false).unwrap();
        assert_eq!(l.label, 0.0);
    }

    #[test]
    fn identical_heads_and_embeddings_zero_positive_term() {
        let (mut p, _) = setup(2);
        p.head_g = p.head_f.clone();
        let x = SparseMatrix::from_dense(&DenseMatrix::from_rows(&vec![vec![1.0, 0.5, 0.0, 2.0]; 2]).unwrap());
        let plan =
            LossPlan::from_batch(&EdgeBatch::new(vec![(0, 1)]), &[0, 0], &[false, false], &LossOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l, _) = compute_loss(&mut p, &x, &plan, &LossOptions::default(), &mut rng, false).unwrap();
        assert!(l.positive.abs() < 1e-24);
        assert!(l.total.abs() < 1e-24);
    }

    #[test]
    fn enumerated_plan_on_path() {
        let (adj, _) = Csr::from_undirected(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let plan = LossPlan::enumerated(&adj, &[0; 4], &[false; 4], &LossOptions::default());
        // node 0 has 2 non-neighbors, node 1 has 1; endpoints appear once per incident edge.
        let w0: f64 = plan.negatives.iter().filter(|t| t.anchor == 0).map(|t| t.weight).sum();
        let w1: f64 = plan.negatives.iter().filter(|t| t.anchor == 1).map(|t| t.weight).sum();
        assert!((w0 - 1.0 / 3.0).abs() < 1e-15);
        assert!((w1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_label_only() {
        let (mut p, x) = setup(3);
        let opts = LossOptions { alpha: 0.0, ..LossOptions::default() };
        let plan = LossPlan::from_batch(&EdgeBatch::new(vec![(0, 1), (1, 2)]), &[0, 1, 2], &[true, true, false], &opts);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l, _) = compute_loss(&mut p, &x, &plan, &opts, &mut rng, false).unwrap();
        assert_eq!(l.total, l.label);
    }
}
