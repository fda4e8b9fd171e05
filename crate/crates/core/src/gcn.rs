//! Graph convolution baseline with symmetric-normalized aggregation and
//! instrumented single-node inference.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, TgsError};
use crate::graph::{Csr, GraphStore, NodeId};
use crate::layers::cross_entropy;
use crate::matrix::{argmax, DenseMatrix};
use crate::model::{glorot, FeatureRows};
use crate::optim::{AdamState, Parameters, WeightDecay};
use crate::sparse::SparseMatrix;
use crate::trainer::{stream, DatasetSummary, STREAM_INIT};

/// Per-node factors `1/√(d_i + 1)`; the coefficient of edge `(i, j)`, self-loops
/// included, is their product.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnNorm {
    inv_sqrt: Vec<f64>,
}

impl GcnNorm {
    pub fn new(adj: &Csr) -> Self {
        Self { inv_sqrt: (0..adj.n_nodes()).map(|v| 1.0 / ((adj.degree(v) + 1) as f64).sqrt()).collect() }
    }

    #[inline]
    pub fn coefficient(&self, i: NodeId, j: NodeId) -> f64 {
        self.inv_sqrt[i] * self.inv_sqrt[j]
    }

    /// `Â m` with `Â = D^{-1/2}(A + I)D^{-1/2}`.
    pub fn aggregate(&self, adj: &Csr, m: &DenseMatrix) -> DenseMatrix {
        let (n, c) = m.shape();
        let mut out = DenseMatrix::zeros(n, c);
        for i in 0..n {
            let row = out.row_mut(i);
            let s = self.coefficient(i, i);
            for (o, &x) in row.iter_mut().zip(m.row(i)) {
                *o = s * x;
            }
            for &j in adj.neighbors(i) {
                let w = self.coefficient(i, j);
                for (o, &x) in row.iter_mut().zip(m.row(j)) {
                    *o += w * x;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    /// `W^(0): d×F`, …, `W^(L−1): F×C`.
    pub layers: Vec<DenseMatrix>,
}

impl GcnParams {
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        classes: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || classes == 0 || layers == 0 {
            return Err(TgsError::InvalidArgument("degenerate GCN dimensions".into()));
        }
        let ws = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { input } else { hidden };
                let fan_out = if l + 1 == layers { classes } else { hidden };
                glorot(fan_in, fan_out, rng)
            })
            .collect();
        Ok(Self { layers: ws })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |w| w.cols())
    }

    fn check(&self, features: usize) -> Result<()> {
        let mut expect = features;
        for (l, w) in self.layers.iter().enumerate() {
            if w.rows() != expect {
                return Err(TgsError::Shape(format!("GCN layer {l} expects {} inputs, got {expect}", w.rows())));
            }
            expect = w.cols();
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("gcn");
        for (l, w) in self.layers.iter().enumerate() {
            ck.push(format!("layer{l}.weight"), w.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("gcn")?;
        let mut layers = Vec::new();
        while let Ok(w) = ck.get(&format!("layer{}.weight", layers.len())) {
            layers.push(w.clone());
        }
        if layers.is_empty() {
            return Err(TgsError::Checkpoint("GCN checkpoint has no layers".into()));
        }
        let p = Self { layers };
        p.check(p.layers[0].rows())?;
        Ok(p)
    }
}

impl Parameters for GcnParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        self.layers.iter().enumerate().map(|(l, w)| (format!("layer{l}.weight"), w.data())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.layers.iter_mut().enumerate().map(|(l, w)| (format!("layer{l}.weight"), w.data_mut())).collect()
    }
}

struct ForwardCache {
    /// Input to each layer (`H_l`, `l ≥ 1`); layer 0 reads the features.
    hidden: Vec<DenseMatrix>,
    /// Aggregated pre-activations `Â H_l W_l` for every layer.
    pre: Vec<DenseMatrix>,
}

fn forward<X: FeatureRows>(params: &GcnParams, norm: &GcnNorm, adj: &Csr, x: &X) -> Result<ForwardCache> {
    params.check(x.n_cols())?;
    if x.n_rows() != adj.n_nodes() {
        return Err(TgsError::Shape(format!("{} feature rows for {} nodes", x.n_rows(), adj.n_nodes())));
    }
    let mut hidden: Vec<DenseMatrix> = Vec::new();
    let mut pre = Vec::new();
    for (l, w) in params.layers.iter().enumerate() {
        let t = if l == 0 { x.times(w)? } else { hidden[l - 1].matmul(w)? };
        let a = norm.aggregate(adj, &t);
        if l + 1 < params.depth() {
            hidden.push(a.map(|v| v.max(0.0)));
        }
        pre.push(a);
    }
    Ok(ForwardCache { hidden, pre })
}

/// Logits for every node: aggregation with self-loops at each layer, ReLU
/// between layers.
pub fn gcn_full_forward<X: FeatureRows>(
    params: &GcnParams,
    g: &GraphStore,
    norm: &GcnNorm,
    x: &X,
) -> Result<DenseMatrix> {
    let mut c = forward(params, norm, g.adjacency(), x)?;
    Ok(c.pre.pop().expect("at least one layer"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecay,
    pub epochs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            weight_decay_mode: WeightDecay::Coupled,
            epochs: 200,
            hidden: 16,
            layers: 2,
            seed: 0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TgsError::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TgsError::InvalidArgument("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(TgsError::InvalidArgument("epochs, hidden and layers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnReport {
    pub config: GcnConfig,
    pub dataset: DatasetSummary,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub final_val_accuracy: f64,
    pub epochs: Vec<GcnEpoch>,
}

pub struct GcnOutcome {
    pub params: GcnParams,
    pub report: GcnReport,
    pub seconds: f64,
}

fn masked_accuracy(logits: &DenseMatrix, labels: &[usize], ids: &[NodeId]) -> f64 {
    let correct = ids.iter().filter(|&&v| argmax(logits.row(v)) == labels[v]).count();
    correct as f64 / ids.len() as f64
}

/// Mean cross-entropy over `ids` and its gradient for every layer weight.
pub fn gcn_loss_grad<X: FeatureRows>(
    params: &GcnParams,
    g: &GraphStore,
    norm: &GcnNorm,
    x: &X,
    ids: &[NodeId],
) -> Result<(f64, GcnParams)> {
    let adj = g.adjacency();
    let labels: Vec<usize> = ids.iter().map(|&v| g.labels()[v]).collect();
    let cache = forward(params, norm, adj, x)?;
    let logits = cache.pre.last().expect("at least one layer");
    let (loss, d_ids) = cross_entropy(&logits.gather_rows(ids), &labels)?;
    let mut d_pre = DenseMatrix::zeros(logits.rows(), logits.cols());
    for (k, &v) in ids.iter().enumerate() {
        d_pre.row_mut(v).copy_from_slice(d_ids.row(k));
    }
    let mut grads = GcnParams { layers: Vec::with_capacity(params.depth()) };
    // Â is symmetric, so the backward aggregation reuses it.
    for l in (0..params.depth()).rev() {
        let d_t = norm.aggregate(adj, &d_pre);
        let d_w = if l == 0 { x.transpose_times(&d_t)? } else { cache.hidden[l - 1].matmul_tn(&d_t)? };
        grads.layers.push(d_w);
        if l > 0 {
            let mut d_h = d_t.matmul_nt(&params.layers[l])?;
            for (d, &a) in d_h.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            d_pre = d_h;
        }
    }
    grads.layers.reverse();
    Ok((loss, grads))
}

/// Full-batch training with cross-entropy on the train nodes and Adam; the
/// best-validation snapshot is returned.
pub fn gcn_train(g: &GraphStore, cfg: &GcnConfig) -> Result<GcnOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let train_ids = g.masks().train_ids();
    let val_ids = g.masks().val_ids();
    let test_ids = g.masks().test_ids();
    if train_ids.is_empty() {
        return Err(TgsError::EmptyMask("training mask is empty".into()));
    }
    if val_ids.is_empty() {
        return Err(TgsError::EmptyMask("validation mask is empty".into()));
    }
    let adj = g.adjacency();
    let norm = GcnNorm::new(adj);
    let x = SparseMatrix::from_dense(g.features());
    let mut params =
        GcnParams::init(g.n_features(), cfg.hidden, g.n_classes(), cfg.layers, &mut stream(cfg.seed, STREAM_INIT))?;
    let mut adam = AdamState::default();
    let mut best: Option<(f64, usize, GcnParams)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let (loss, grads) = gcn_loss_grad(&params, g, &norm, &x, &train_ids)?;
        if !loss.is_finite() {
            return Err(TgsError::Divergence { epoch, detail: format!("GCN loss is {loss}") });
        }
        adam.step(&mut params, &grads, cfg.lr, cfg.weight_decay, cfg.weight_decay_mode).map_err(|e| match e {
            TgsError::NonFiniteGradient(what) => {
                TgsError::Divergence { epoch, detail: format!("non-finite gradient in {what}") }
            }
            other => other,
        })?;

        let logits = gcn_full_forward(&params, g, &norm, &x)?;
        let val_accuracy = masked_accuracy(&logits, g.labels(), &val_ids);
        epochs.push(GcnEpoch { epoch, train_loss: loss, val_accuracy });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, params.clone()));
        }
    }
    let (val_accuracy, best_epoch, params) = best.expect("at least one epoch");
    let test_accuracy = if test_ids.is_empty() {
        None
    } else {
        Some(masked_accuracy(&gcn_full_forward(&params, g, &norm, &x)?, g.labels(), &test_ids))
    };
    let report = GcnReport {
        config: cfg.clone(),
        dataset: DatasetSummary::of(g),
        best_epoch,
        val_accuracy,
        test_accuracy,
        final_val_accuracy: epochs.last().map_or(0.0, |e| e.val_accuracy),
        epochs,
    };
    log::info!("GCN best epoch {best_epoch}: val {val_accuracy:.4}, test {:?}", report.test_accuracy);
    Ok(GcnOutcome { params, report, seconds: started.elapsed().as_secs_f64() })
}

/// Whether intermediate representations survive between queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Every query materializes its own computation tree; nodes are shared
    /// only within one layer of one query.
    PerQuery,
    /// Representations computed by earlier queries are reused.
    CrossQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleNodeResult {
    pub class: usize,
    pub logits: Vec<f64>,
    /// Raw feature rows read for this query.
    pub fetches: usize,
    /// Neighbor lists read for this query.
    pub adjacency_reads: usize,
}

/// Answers one node at a time by expanding its L-hop neighborhood.
pub struct SingleNodeEngine<'a> {
    params: &'a GcnParams,
    g: &'a GraphStore,
    norm: GcnNorm,
    policy: CachePolicy,
    /// `cache[l]` holds layer-`l` representations; layer 0 is raw features.
    cache: Vec<HashMap<NodeId, Vec<f64>>>,
}

fn row_times(x: &[f64], w: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (k, &v) in x.iter().enumerate() {
        if v != 0.0 {
            for (o, &wk) in out.iter_mut().zip(w.row(k)) {
                *o += v * wk;
            }
        }
    }
    out
}

impl<'a> SingleNodeEngine<'a> {
    pub fn new(params: &'a GcnParams, g: &'a GraphStore, policy: CachePolicy) -> Result<Self> {
        params.check(g.n_features())?;
        Ok(Self {
            params,
            g,
            norm: GcnNorm::new(g.adjacency()),
            policy,
            cache: vec![HashMap::new(); params.depth() + 1],
        })
    }

    pub fn infer(&mut self, v: NodeId) -> Result<SingleNodeResult> {
        let n = self.g.n_nodes();
        if v >= n {
            return Err(TgsError::NodeOutOfRange { node: v, nodes: n });
        }
        if self.policy == CachePolicy::PerQuery {
            self.cache.iter_mut().for_each(HashMap::clear);
        }
        let depth = self.params.depth();
        let adj = self.g.adjacency();
        // frontier[l]: nodes whose layer-l representation this query needs.
        let mut frontier: Vec<Vec<NodeId>> = vec![Vec::new(); depth + 1];
        frontier[depth].push(v);
        let mut adjacency_reads = 0;
        for l in (1..=depth).rev() {
            let mut next = Vec::new();
            for &u in &frontier[l] {
                if self.cache[l].contains_key(&u) {
                    continue;
                }
                adjacency_reads += 1;
                next.push(u);
                next.extend_from_slice(adj.neighbors(u));
            }
            next.sort_unstable();
            next.dedup();
            frontier[l - 1] = next;
        }
        let mut fetches = 0;
        for &u in &frontier[0] {
            if !self.cache[0].contains_key(&u) {
                self.cache[0].insert(u, self.g.features().row(u).to_vec());
                fetches += 1;
            }
        }
        for l in 1..=depth {
            let w = &self.params.layers[l - 1];
            let below = &frontier[l - 1];
            let transformed: Vec<Vec<f64>> = below.iter().map(|u| row_times(&self.cache[l - 1][u], w)).collect();
            let at = |u: NodeId| &transformed[below.binary_search(&u).expect("expanded neighbor")];
            let mut fresh = Vec::new();
            for &u in &frontier[l] {
                if self.cache[l].contains_key(&u) {
                    continue;
                }
                let s = self.norm.coefficient(u, u);
                let mut h: Vec<f64> = at(u).iter().map(|x| s * x).collect();
                for &j in adj.neighbors(u) {
                    let c = self.norm.coefficient(u, j);
                    for (o, &x) in h.iter_mut().zip(at(j)) {
                        *o += c * x;
                    }
                }
                if l < depth {
                    h.iter_mut().for_each(|x| *x = x.max(0.0));
                }
                fresh.push((u, h));
            }
            self.cache[l].extend(fresh);
        }
        let logits = self.cache[depth][&v].clone();
        Ok(SingleNodeResult { class: argmax(&logits), logits, fetches, adjacency_reads })
    }
}

/// Single-node inference without cross-query reuse.
pub fn gcn_infer_single_node(params: &GcnParams, g: &GraphStore, v: NodeId) -> Result<SingleNodeResult> {
    SingleNodeEngine::new(params, g, CachePolicy::PerQuery)?.infer(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitMasks;
    use crate::synthetic::{regular_tree, tree_ball_size};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(n: usize, edges: &[(usize, usize)], d: usize, seed: u64) -> GraphStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let (adj, _) = Csr::from_undirected(n, edges).unwrap();
        let labels = (0..n).map(|v| v % 3).collect();
        GraphStore::new(x, adj, labels, 3, SplitMasks::empty(n)).unwrap()
    }

    #[test]
    fn two_node_aggregation_is_half() {
        let (adj, _) = Csr::from_undirected(2, &[(0, 1)]).unwrap();
        let a = GcnNorm::new(&adj).aggregate(&adj, &DenseMatrix::identity(2));
        assert!(a.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn edgeless_graph_is_plain_mlp() {
        let g = store(5, &[], 4, 1);
        let p = GcnParams::init(4, 6, 3, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let logits = gcn_full_forward(&p, &g, &GcnNorm::new(g.adjacency()), g.features()).unwrap();
        let mlp = g.features().matmul(&p.layers[0]).unwrap().map(|v| v.max(0.0)).matmul(&p.layers[1]).unwrap();
        for (a, b) in logits.data().iter().zip(mlp.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_permutes_logits() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4)];
        let g = store(5, &edges, 3, 3);
        let perm = [3, 0, 4, 1, 2];
        let pe: Vec<_> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut px = DenseMatrix::zeros(5, 3);
        for v in 0..5 {
            px.row_mut(perm[v]).copy_from_slice(g.features().row(v));
        }
        let (padj, _) = Csr::from_undirected(5, &pe).unwrap();
        let pg = GraphStore::new(px, padj, vec![0; 5], 3, SplitMasks::empty(5)).unwrap();
        let p = GcnParams::init(3, 4, 3, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let a = gcn_full_forward(&p, &g, &GcnNorm::new(g.adjacency()), g.features()).unwrap();
        let b = gcn_full_forward(&p, &pg, &GcnNorm::new(pg.adjacency()), pg.features()).unwrap();
        for v in 0..5 {
            for (x, y) in a.row(v).iter().zip(b.row(perm[v])) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_matches_full_forward() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 5), (5, 6), (2, 6)];
        let g = store(8, &edges, 5, 5);
        for layers in 1..=3 {
            let p = GcnParams::init(5, 4, 3, layers, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
            let full = gcn_full_forward(&p, &g, &GcnNorm::new(g.adjacency()), g.features()).unwrap();
            let mut cached = SingleNodeEngine::new(&p, &g, CachePolicy::CrossQuery).unwrap();
            for v in 0..8 {
                let r = gcn_infer_single_node(&p, &g, v).unwrap();
                let c = cached.infer(v).unwrap();
                for ((a, b), d) in r.logits.iter().zip(full.row(v)).zip(&c.logits) {
                    assert!((a - b).abs() < 1e-9 && (d - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn isolated_node_fetches_itself() {
        let g = store(3, &[(0, 1)], 2, 7);
        let p = GcnParams::init(2, 4, 3, 3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(gcn_infer_single_node(&p, &g, 2).unwrap().fetches, 1);
    }

    #[test]
    fn tree_fetches_follow_ball_size() {
        let r = 4;
        let g = regular_tree(r, 3, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for layers in 1..=3 {
            let p = GcnParams::init(2, 3, 1, layers, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
            let res = gcn_infer_single_node(&p, &g, 0).unwrap();
            assert_eq!(res.fetches, tree_ball_size(r, layers));
        }
        // 1 + R + R(R-1) at two layers
        assert_eq!(tree_ball_size(r, 2), 1 + r + r * (r - 1));
    }

    #[test]
    fn cross_query_cache_saves_fetches() {
        let g = store(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], 2, 11);
        let p = GcnParams::init(2, 3, 3, 2, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let mut e = SingleNodeEngine::new(&p, &g, CachePolicy::CrossQuery).unwrap();
        assert_eq!(e.infer(2).unwrap().fetches, 5);
        assert_eq!(e.infer(2).unwrap().fetches, 0);
        assert_eq!(e.infer(3).unwrap().fetches, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = GcnParams::init(5, 4, 3, 3, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let back = GcnParams::from_checkpoint(&Checkpoint::from_bytes(&p.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
