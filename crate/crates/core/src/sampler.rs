//! Mini-batch edge sampling and negative-node sampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::graph::{Csr, GraphStore, NodeId};

/// Cap on rejection rounds when negatives must avoid the anchor's neighborhood.
const MAX_REJECTIONS: usize = 64;

/// Edges for one optimizer step plus their negative nodes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeBatch {
    /// Undirected edges, each stored once as `(i, j)` with `i < j`.
    pub edges: Vec<(NodeId, NodeId)>,
    /// `negatives_per_edge` entries per edge, edge-major: entry
    /// `e * per_edge + s` holds `(k_i, k_j)`, the negatives for the two endpoints.
    pub negatives: Vec<(NodeId, NodeId)>,
    pub per_edge: usize,
}

impl EdgeBatch {
    pub fn new(edges: Vec<(NodeId, NodeId)>) -> Self {
        Self { edges, negatives: Vec::new(), per_edge: 0 }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn negatives_for(&self, edge: usize) -> &[(NodeId, NodeId)] {
        &self.negatives[edge * self.per_edge..(edge + 1) * self.per_edge]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeKind {
    Uniform,
    Degree,
}

impl std::str::FromStr for NegativeKind {
    type Err = TgsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "degree" => Ok(Self::Degree),
            other => Err(TgsError::InvalidArgument(format!("unknown negative distribution '{other}'"))),
        }
    }
}

/// Distribution negatives are drawn from. Sampling uses inverse-CDF lookup
/// over a cumulative table.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeDist {
    kind: NegativeKind,
    cumulative: Vec<f64>,
}

impl NegativeDist {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(TgsError::InvalidArgument("negative distribution over zero nodes".into()));
        }
        let cumulative = (1..=n).map(|i| i as f64 / n as f64).collect();
        Ok(Self { kind: NegativeKind::Uniform, cumulative })
    }

    /// `P(v) = d_v / Σ d`.
    pub fn degree(g: &GraphStore) -> Result<Self> {
        Self::from_weights(NegativeKind::Degree, &g.degree_distribution()?)
    }

    pub fn for_graph(kind: NegativeKind, g: &GraphStore) -> Result<Self> {
        match kind {
            NegativeKind::Uniform => Self::uniform(g.n_nodes()),
            NegativeKind::Degree => Self::degree(g),
        }
    }

    fn from_weights(kind: NegativeKind, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(TgsError::InvalidArgument(
                "negative weights must be finite, non-negative, not all zero".into(),
            ));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { kind, cumulative })
    }

    pub fn kind(&self) -> NegativeKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.cumulative.len()
    }

    pub fn probability(&self, v: NodeId) -> f64 {
        let prev = if v == 0 { 0.0 } else { self.cumulative[v - 1] };
        self.cumulative[v] - prev
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        match self.kind {
            NegativeKind::Uniform => rng.gen_range(0..self.cumulative.len()),
            NegativeKind::Degree => {
                let u: f64 = rng.gen();
                // first index whose cumulative mass exceeds u
                self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
            }
        }
    }

    /// Draws a node that is neither `anchor` nor adjacent to it. After a
    /// bounded number of rejections the draw is made directly from the
    /// distribution restricted to valid nodes; if it has no mass there, an
    /// unrestricted draw is returned.
    fn sample_avoiding<R: Rng + ?Sized>(&self, anchor: NodeId, adjacency: &Csr, rng: &mut R) -> NodeId {
        let valid = |k: NodeId| k != anchor && !adjacency.has_edge(anchor, k);
        for _ in 0..MAX_REJECTIONS {
            let k = self.sample(rng);
            if valid(k) {
                return k;
            }
        }
        let candidates: Vec<(NodeId, f64)> = (0..self.n_nodes())
            .filter(|&k| valid(k))
            .map(|k| (k, self.probability(k)))
            .filter(|&(_, p)| p > 0.0)
            .collect();
        let total: f64 = candidates.iter().map(|c| c.1).sum();
        if candidates.is_empty() {
            return self.sample(rng);
        }
        let mut u = rng.gen::<f64>() * total;
        for &(k, p) in &candidates {
            if u < p {
                return k;
            }
            u -= p;
        }
        candidates[candidates.len() - 1].0
    }
}

/// Shuffles `edges` and cuts them into consecutive batches of at most
/// `batch_size`. Every edge lands in exactly one batch.
pub fn batches_from_edges<R: Rng + ?Sized>(
    edges: &[(NodeId, NodeId)],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<EdgeBatch>> {
    if batch_size == 0 {
        return Err(TgsError::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut order = edges.to_vec();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(|c| EdgeBatch::new(c.to_vec())).collect())
}

/// One epoch of edge batches over `g`.
pub fn epoch_batches<R: Rng + ?Sized>(g: &GraphStore, batch_size: usize, rng: &mut R) -> Result<Vec<EdgeBatch>> {
    batches_from_edges(&g.adjacency().undirected_edges(), batch_size, rng)
}

/// Fills `batch.negatives` with `per_edge` independent draws per endpoint.
/// With `avoid` set, draws that hit the endpoint itself or one of its
/// neighbors are rejected.
pub fn draw_negatives<R: Rng + ?Sized>(
    batch: &mut EdgeBatch,
    dist: &NegativeDist,
    per_edge: usize,
    avoid: Option<&Csr>,
    rng: &mut R,
) {
    batch.per_edge = per_edge;
    batch.negatives.clear();
    batch.negatives.reserve(batch.edges.len() * per_edge);
    for &(i, j) in &batch.edges {
        for _ in 0..per_edge {
            let pair = match avoid {
                None => (dist.sample(rng), dist.sample(rng)),
                Some(adj) => (dist.sample_avoiding(i, adj, rng), dist.sample_avoiding(j, adj, rng)),
            };
            batch.negatives.push(pair);
        }
    }
}

/// Holds the edge list of one graph and produces shuffled, negative-filled
/// batches epoch after epoch.
#[derive(Debug, Clone)]
pub struct EdgeSampler {
    edges: Vec<(NodeId, NodeId)>,
    batch_size: usize,
    per_edge: usize,
    dist: NegativeDist,
    avoid_neighbors: bool,
}

impl EdgeSampler {
    pub fn new(
        g: &GraphStore,
        batch_size: usize,
        kind: NegativeKind,
        per_edge: usize,
        avoid_neighbors: bool,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(TgsError::InvalidArgument("batch size must be at least 1".into()));
        }
        let dist = match kind {
            NegativeKind::Uniform => NegativeDist::uniform(g.n_nodes())?,
            NegativeKind::Degree => NegativeDist::degree(g)?,
        };
        Ok(Self { edges: g.adjacency().undirected_edges(), batch_size, per_edge, dist, avoid_neighbors })
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn epoch<R: Rng + ?Sized>(&self, adjacency: &Csr, rng: &mut R) -> Result<Vec<EdgeBatch>> {
        let mut batches = batches_from_edges(&self.edges, self.batch_size, rng)?;
        let avoid = self.avoid_neighbors.then_some(adjacency);
        for b in &mut batches {
            draw_negatives(b, &self.dist, self.per_edge, avoid, rng);
        }
        Ok(batches)
    }
}
