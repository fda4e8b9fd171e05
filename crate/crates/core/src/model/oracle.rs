//! Full-graph losses written directly from their node-wise definitions.
//!
//! Feature term: `(1/N) Σ_i (P_i − Q_i)` where `P_i` is the mean positive
//! distance to the neighbors of `i` and `Q_i` the mean negative distance to its
//! `M_i = N − |N_i| − 1` non-neighbors. Label term: for each labeled node the
//! cross-entropy of head `f` plus, for each neighbor `j`, the cross-entropy of
//! head `g` at `j` against the label of `i`, averaged over labeled nodes.
//!
//! The sampled batch loss with a full-edge batch and enumerated negatives
//! equals `(1/|E|) Σ_i d_i (P_i − Q_i)`, so it matches this definition after
//! reweighting node `i` by `d_i N / |E|`. The per-node terms are returned for
//! that comparison.

use super::{backbone_eval, LossOptions, TgsParams};
use crate::error::Result;
use crate::graph::GraphStore;
use crate::layers::{cross_entropy_row, sigmoid, softmax_into, softmax_rows, squared_distance};
use crate::matrix::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct FullGraphLoss {
    pub feature: f64,
    pub label: f64,
    pub total: f64,
    /// `P_i − Q_i`; zero for isolated nodes.
    pub per_node_feature: Vec<f64>,
}

/// Evaluation-mode full-graph losses over every node of `g`, using the train
/// mask as the labeled set.
pub fn full_graph_loss(params: &TgsParams, g: &GraphStore, opts: &LossOptions) -> Result<FullGraphLoss> {
    let n = g.n_nodes();
    let x = g.features();
    let h = backbone_eval(params, x)?;
    let y = params.head_f.forward(&h)?;
    let z = params.head_g.forward(&h)?;
    let y_hat = softmax_rows(&y);
    let z_hat = softmax_rows(&z);
    let proj = x.matmul(&params.mixup_proj)?;
    let f = h.cols();
    let adj = g.adjacency();

    let mut per_node = vec![0.0; n];
    for i in 0..n {
        let nbrs = adj.neighbors(i);
        if nbrs.is_empty() {
            continue;
        }
        let mut pos = 0.0;
        for &j in nbrs {
            let beta = if opts.no_mixup_augment {
                1.0
            } else {
                sigmoid(dot(&params.attention[..f], proj.row(i)) + dot(&params.attention[f..], proj.row(j)))
            };
            let mixed: Vec<f64> = (0..f).map(|c| beta * h.get(j, c) + (1.0 - beta) * h.get(i, c)).collect();
            let zp = params.head_g.forward_row(&mixed);
            pos += if opts.normalize_positive_term {
                let mut s = vec![0.0; zp.len()];
                softmax_into(&zp, &mut s);
                squared_distance(y_hat.row(i), &s)
            } else {
                squared_distance(y.row(i), &zp)
            };
        }
        let mut term = pos / nbrs.len() as f64;
        let m = n - nbrs.len() - 1;
        if !opts.no_negatives && m > 0 {
            let neg: f64 = (0..n)
                .filter(|&k| k != i && !adj.has_edge(i, k))
                .map(|k| squared_distance(y_hat.row(i), z_hat.row(k)))
                .sum();
            term -= neg / m as f64;
        }
        per_node[i] = term;
    }
    let feature = per_node.iter().sum::<f64>() / n as f64;

    let labeled = g.masks().train_ids();
    let labels = g.labels();
    let mut label = 0.0;
    for &i in &labeled {
        label += cross_entropy_row(y.row(i), labels[i]);
        if !opts.no_label_sd {
            for &j in adj.neighbors(i) {
                label += cross_entropy_row(z.row(j), labels[i]);
            }
        }
    }
    if !labeled.is_empty() {
        label /= labeled.len() as f64;
    }
    Ok(FullGraphLoss { feature, label, total: label + opts.alpha * feature, per_node_feature: per_node })
}
