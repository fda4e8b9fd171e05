//! Graph generators: controlled-degree random graphs for benchmarks, complete
//! regular trees for fetch counting, a two-cluster toy task, and a citation
//! network stand-in with Cora's size and class statistics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::graph::{Csr, GraphStore, NodeId, SplitMasks, SplitSpec};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeModel {
    /// Ring plus random chords between low-degree nodes.
    RegularIsh,
    /// Random spanning tree plus Chung-Lu edges with power-law weights.
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub avg_degree: f64,
    pub model: DegreeModel,
    pub features: usize,
    pub classes: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { nodes: 1000, avg_degree: 10.0, model: DegreeModel::RegularIsh, features: 64, classes: 4 }
    }
}

/// A connected graph whose average degree is `round(N·R/2)·2/N`, with
/// Gaussian features, uniform random labels and a 60/20/20 random split.
pub fn gen_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<GraphStore> {
    let n = spec.nodes;
    let r = spec.avg_degree;
    if n < 2 {
        return Err(TgsError::InvalidArgument("synthetic graph needs at least 2 nodes".into()));
    }
    if !(r < n as f64) || spec.classes == 0 {
        return Err(TgsError::InvalidArgument(format!("average degree {r} must be below the node count {n}")));
    }
    let target = ((n as f64 * r) / 2.0).round() as usize;
    let min_edges = if spec.model == DegreeModel::RegularIsh && n > 2 { n } else { n - 1 };
    if target < min_edges {
        return Err(TgsError::InvalidArgument(format!("average degree {r} too low for a connected {n}-node graph")));
    }
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut degree = vec![0usize; n];
    let add = |a: NodeId, b: NodeId, edges: &mut BTreeSet<(NodeId, NodeId)>, degree: &mut Vec<usize>| {
        if a != b && edges.insert((a.min(b), a.max(b))) {
            degree[a] += 1;
            degree[b] += 1;
        }
    };
    match spec.model {
        DegreeModel::RegularIsh => {
            for v in 0..n {
                add(v, (v + 1) % n, &mut edges, &mut degree);
            }
            let cap = r.ceil() as usize;
            let mut stalls = 0;
            while edges.len() < target {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                let full = degree[a] >= cap || degree[b] >= cap;
                if full && stalls < 1000 {
                    stalls += 1;
                    continue;
                }
                stalls = 0;
                add(a, b, &mut edges, &mut degree);
            }
        }
        DegreeModel::PowerLaw => {
            let mut order: Vec<NodeId> = (0..n).collect();
            order.shuffle(rng);
            for k in 1..n {
                let parent = order[rng.gen_range(0..k)];
                add(order[k], parent, &mut edges, &mut degree);
            }
            let weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-1.0 / 1.5)).collect();
            let cumulative = cumulative(&weights);
            while edges.len() < target {
                let a = pick(&cumulative, rng);
                let b = pick(&cumulative, rng);
                add(a, b, &mut edges, &mut degree);
            }
        }
    }
    let pairs: Vec<_> = edges.into_iter().collect();
    let (adj, _) = Csr::from_undirected(n, &pairs)?;
    let features = DenseMatrix::from_fn(n, spec.features, |_, _| gaussian(rng));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..spec.classes)).collect();
    let mut ids: Vec<NodeId> = (0..n).collect();
    ids.shuffle(rng);
    let (a, b) = (n * 6 / 10, n * 8 / 10);
    let masks = SplitMasks::from_ids(n, &ids[..a], &ids[a..b], &ids[b..]);
    GraphStore::new(features, adj, labels, spec.classes, masks)
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn pick<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; one of the pair is discarded.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Complete tree: the root has `branching` children and every other internal
/// node `branching − 1`, so every internal node has degree `branching`. Node 0
/// is the root; ids grow level by level.
pub fn regular_tree<R: Rng + ?Sized>(
    branching: usize,
    depth: usize,
    features: usize,
    rng: &mut R,
) -> Result<GraphStore> {
    if branching < 2 {
        return Err(TgsError::InvalidArgument("tree branching must be at least 2".into()));
    }
    let mut edges = Vec::new();
    let mut level = vec![0usize];
    let mut next_id = 1;
    for d in 0..depth {
        let kids = if d == 0 { branching } else { branching - 1 };
        let mut next = Vec::with_capacity(level.len() * kids);
        for &p in &level {
            for _ in 0..kids {
                edges.push((p, next_id));
                next.push(next_id);
                next_id += 1;
            }
        }
        level = next;
    }
    let n = next_id;
    let (adj, _) = Csr::from_undirected(n, &edges)?;
    let x = DenseMatrix::from_fn(n, features, |_, _| gaussian(rng));
    GraphStore::new(x, adj, vec![0; n], 1, SplitMasks::empty(n))
}

/// Number of nodes within `hops` of the root of [`regular_tree`] (deep enough).
pub fn tree_ball_size(branching: usize, hops: usize) -> usize {
    1 + (0..hops).map(|t| branching * (branching - 1).pow(t as u32)).sum::<usize>()
}

/// Two Gaussian blobs in feature space (class = blob), edges mostly within a
/// blob, half the nodes of each blob labeled for training.
pub fn two_blobs<R: Rng + ?Sized>(per_class: usize, features: usize, rng: &mut R) -> Result<GraphStore> {
    let n = 2 * per_class;
    let labels: Vec<usize> = (0..n).map(|v| v / per_class).collect();
    let x = DenseMatrix::from_fn(n, features, |v, c| {
        let centre = if (c % 2 == 0) == (labels[v] == 0) { 1.5 } else { -1.5 };
        centre + 0.7 * gaussian(rng)
    });
    let mut edges = Vec::new();
    for v in 0..n {
        for _ in 0..2 {
            let same = rng.gen_bool(0.9);
            let base = if same { labels[v] } else { 1 - labels[v] } * per_class;
            edges.push((v, base + rng.gen_range(0..per_class)));
        }
    }
    let (adj, _) = Csr::from_undirected(n, &edges)?;
    let train: Vec<NodeId> = (0..n).filter(|v| v % per_class < per_class / 2).collect();
    let val: Vec<NodeId> = (0..n).filter(|v| v % per_class >= per_class / 2).collect();
    GraphStore::new(x, adj, labels, 2, SplitMasks::from_ids(n, &train, &val, &[]))
}

/// Shape of the citation-network stand-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationSpec {
    pub class_sizes: Vec<usize>,
    pub vocabulary: usize,
    pub edges: usize,
    /// Fraction of edges joining two nodes of the same class.
    pub homophily: f64,
    /// Mean number of distinct words per node.
    pub words_per_node: f64,
    /// Topic words per class.
    pub topic_words: usize,
    /// Probability that a word is drawn from the node's own topic.
    pub topic_rate: f64,
    /// Probability that a node writes about a different class's topic.
    pub off_topic_nodes: f64,
    pub degree_exponent: f64,
    /// Mean number of words each node copies from the papers it links to.
    pub inherited_words: f64,
}

impl CitationSpec {
    /// Cora's published statistics: 2708 papers, 1433 words, 7 classes and
    /// 5278 undirected citation links.
    pub fn cora() -> Self {
        Self {
            class_sizes: vec![351, 217, 418, 818, 426, 298, 180],
            vocabulary: 1433,
            edges: 5278,
            homophily: 0.81,
            words_per_node: 18.0,
            topic_words: 200,
            topic_rate: 0.4,
            off_topic_nodes: 0.15,
            degree_exponent: 2.2,
            inherited_words: 0.0,
        }
    }
}

/// Citation-network stand-in with the standard transductive split (20 labeled
/// nodes per class, 500 validation, 1000 test). Features are binary
/// bags of words: each node mixes words from its class topic with background
/// words, and every node has at least one link.
pub fn citation_like(spec: &CitationSpec, seed: u64) -> Result<GraphStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = spec.class_sizes.len();
    let n: usize = spec.class_sizes.iter().sum();
    if classes == 0 || spec.topic_words * classes > spec.vocabulary {
        return Err(TgsError::InvalidArgument("topic vocabulary exceeds the vocabulary".into()));
    }
    let mut labels: Vec<usize> =
        spec.class_sizes.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    labels.shuffle(&mut rng);

    // Degree propensities: Pareto tail with minimum 1.
    let tail = 1.0 / (spec.degree_exponent - 1.0);
    let weight: Vec<f64> = (0..n).map(|_| (1.0 - rng.gen::<f64>()).powf(-tail).min(n as f64 / 10.0)).collect();
    let mut members: Vec<Vec<NodeId>> = vec![Vec::new(); classes];
    for (v, &y) in labels.iter().enumerate() {
        members[y].push(v);
    }
    let class_cum: Vec<Vec<f64>> =
        members.iter().map(|m| cumulative(&m.iter().map(|&v| weight[v]).collect::<Vec<_>>())).collect();
    let all_cum = cumulative(&weight);

    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let partner = |a: NodeId, rng: &mut ChaCha8Rng| -> NodeId {
        if rng.gen_bool(spec.homophily) {
            let c = labels[a];
            members[c][pick(&class_cum[c], rng)]
        } else {
            loop {
                let b = pick(&all_cum, rng);
                if labels[b] != labels[a] {
                    return b;
                }
            }
        }
    };
    let mut order: Vec<NodeId> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut has_edge = vec![false; n];
    for &a in &order {
        while !has_edge[a] {
            let b = partner(a, &mut rng);
            if b != a && edges.insert((a.min(b), a.max(b))) {
                has_edge[a] = true;
                has_edge[b] = true;
            }
        }
    }
    while edges.len() < spec.edges {
        let a = pick(&all_cum, &mut rng);
        let b = partner(a, &mut rng);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }

    let mut own: Vec<Vec<usize>> = Vec::with_capacity(n);
    for v in 0..n {
        let topic = if rng.gen_bool(spec.off_topic_nodes) { rng.gen_range(0..classes) } else { labels[v] };
        let words = (spec.words_per_node * (0.5 + rng.gen::<f64>())).round().max(1.0) as usize;
        own.push(
            (0..words)
                .map(|_| {
                    if rng.gen_bool(spec.topic_rate) {
                        topic * spec.topic_words + rng.gen_range(0..spec.topic_words)
                    } else {
                        rng.gen_range(0..spec.vocabulary)
                    }
                })
                .collect(),
        );
    }
    let pairs: Vec<_> = edges.into_iter().collect();
    let (adj, _) = Csr::from_undirected(n, &pairs)?;
    let mut features = DenseMatrix::zeros(n, spec.vocabulary);
    for v in 0..n {
        for &w in &own[v] {
            features.set(v, w, 1.0);
        }
        let nbrs = adj.neighbors(v);
        let copies = (spec.inherited_words * (0.5 + rng.gen::<f64>())).round() as usize;
        for _ in 0..copies {
            let src = &own[nbrs[rng.gen_range(0..nbrs.len())]];
            features.set(v, src[rng.gen_range(0..src.len())], 1.0);
        }
    }
    let g = GraphStore::new(features, adj, labels, classes, SplitMasks::empty(n))?;
    let masks = g.make_split(&SplitSpec::per_class(20, 500, 1000, seed))?;
    g.with_masks(masks)
}

/// [`citation_like`] with Cora's statistics.
pub fn cora_like(seed: u64) -> Result<GraphStore> {
    citation_like(&CitationSpec::cora(), seed)
}
