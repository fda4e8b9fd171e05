//! Immutable graph container: node features, symmetric CSR adjacency, labels
//! and train/val/test masks, plus the split and label-noise transforms used by
//! the robustness protocols.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Result, TgsError};
use crate::matrix::DenseMatrix;

pub type NodeId = usize;

/// Compressed sparse row adjacency of an undirected simple graph.
///
/// Both directions of every edge are stored; column ids within a row are
/// sorted and unique; there are no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    columns: Vec<NodeId>,
}

impl Csr {
    /// Builds a symmetric CSR from undirected pairs. Self-loops and repeated
    /// pairs (in either orientation) are dropped; the number of dropped
    /// self-loops is returned alongside.
    pub fn from_undirected(n: usize, pairs: &[(NodeId, NodeId)]) -> Result<(Self, usize)> {
        let mut degree = vec![0usize; n];
        let mut self_loops = 0;
        for &(a, b) in pairs {
            for v in [a, b] {
                if v >= n {
                    return Err(TgsError::NodeOutOfRange { node: v, nodes: n });
                }
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut columns = vec![0; offsets[n]];
        for &(a, b) in pairs {
            if a == b {
                continue;
            }
            columns[fill[a]] = b;
            fill[a] += 1;
            columns[fill[b]] = a;
            fill[b] += 1;
        }
        // Sort and dedup each row, then compact.
        let mut compact_offsets = vec![0usize; n + 1];
        let mut compact = Vec::with_capacity(columns.len());
        for v in 0..n {
            let row = &mut columns[offsets[v]..offsets[v + 1]];
            row.sort_unstable();
            let mut last = None;
            for &c in row.iter() {
                if last != Some(c) {
                    compact.push(c);
                    last = Some(c);
                }
            }
            compact_offsets[v + 1] = compact.len();
        }
        Ok((Self { offsets: compact_offsets, columns: compact }, self_loops))
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.columns.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn columns(&self) -> &[NodeId] {
        &self.columns
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.columns[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: NodeId) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Every undirected edge once, as `(i, j)` with `i < j`, in row order.
    pub fn undirected_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for i in 0..self.n_nodes() {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Which nodes belong to each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn empty(n: usize) -> Self {
        Self { train: vec![false; n], val: vec![false; n], test: vec![false; n] }
    }

    pub fn from_ids(n: usize, train: &[NodeId], val: &[NodeId], test: &[NodeId]) -> Self {
        let mut m = Self::empty(n);
        for &v in train {
            m.train[v] = true;
        }
        for &v in val {
            m.val[v] = true;
        }
        for &v in test {
            m.test[v] = true;
        }
        m
    }

    pub fn ids(mask: &[bool]) -> Vec<NodeId> {
        mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn train_ids(&self) -> Vec<NodeId> {
        Self::ids(&self.train)
    }

    pub fn val_ids(&self) -> Vec<NodeId> {
        Self::ids(&self.val)
    }

    pub fn test_ids(&self) -> Vec<NodeId> {
        Self::ids(&self.test)
    }

    /// First node that sits in two splits, if any.
    pub fn first_overlap(&self) -> Option<NodeId> {
        (0..self.train.len()).find(|&v| (self.train[v] as u8 + self.val[v] as u8 + self.test[v] as u8) > 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Use the split shipped with the dataset.
    Standard,
    /// `labels_per_class` random training nodes per class, then random
    /// validation and test nodes from the remainder.
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub labels_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn per_class(labels_per_class: usize, val_size: usize, test_size: usize, seed: u64) -> Self {
        Self { mode: SplitMode::PerClass, labels_per_class, val_size, test_size, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio: f64,
    pub seed: u64,
}

/// One dataset: features, structure, labels and split.
#[derive(Debug, Clone)]
pub struct GraphStore {
    n_classes: usize,
    features: DenseMatrix,
    adjacency: Csr,
    labels: Vec<usize>,
    masks: SplitMasks,
}

impl GraphStore {
    /// Validates and assembles a graph. The adjacency is taken as-is; build it
    /// with [`Csr::from_undirected`] to get symmetry and deduplication.
    pub fn new(
        features: DenseMatrix,
        adjacency: Csr,
        labels: Vec<usize>,
        n_classes: usize,
        masks: SplitMasks,
    ) -> Result<Self> {
        let n = adjacency.n_nodes();
        if features.rows() != n {
            return Err(DatasetError::FeatureRowMismatch { expected: n, found: features.rows() }.into());
        }
        if labels.len() != n {
            return Err(DatasetError::LabelCountMismatch { expected: n, found: labels.len() }.into());
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(DatasetError::LabelOutOfRange { node, label: label as i64, classes: n_classes }.into());
        }
        for m in [&masks.train, &masks.val, &masks.test] {
            if m.len() != n {
                return Err(TgsError::Shape(format!("mask of length {} for {n} nodes", m.len())));
            }
        }
        if let Some(v) = masks.first_overlap() {
            return Err(DatasetError::OverlappingSplits(v).into());
        }
        Ok(Self { n_classes, features, adjacency, labels, masks })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n_nodes()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.n_edges()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    pub fn with_masks(&self, masks: SplitMasks) -> Result<Self> {
        Self::new(self.features.clone(), self.adjacency.clone(), self.labels.clone(), self.n_classes, masks)
    }

    /// Same nodes and labels over a different edge set.
    pub fn with_adjacency(&self, adjacency: Csr) -> Result<Self> {
        Self::new(self.features.clone(), adjacency, self.labels.clone(), self.n_classes, self.masks.clone())
    }

    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        if v >= self.n_nodes() {
            return Err(TgsError::NodeOutOfRange { node: v, nodes: self.n_nodes() });
        }
        Ok(self.adjacency.neighbors(v))
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency.degree(v)
    }

    /// `P(v) = d_v / Σ d`.
    pub fn degree_distribution(&self) -> Result<Vec<f64>> {
        let total = self.adjacency.columns().len();
        if total == 0 {
            return Err(TgsError::EmptyEdgeSet);
        }
        Ok((0..self.n_nodes()).map(|v| self.degree(v) as f64 / total as f64).collect())
    }

    /// Fraction of edges whose endpoints share a label.
    pub fn edge_homophily(&self) -> f64 {
        let edges = self.adjacency.undirected_edges();
        if edges.is_empty() {
            return 0.0;
        }
        let same = edges.iter().filter(|&&(i, j)| self.labels[i] == self.labels[j]).count();
        same as f64 / edges.len() as f64
    }

    /// Builds a fresh split according to `spec`.
    pub fn make_split(&self, spec: &SplitSpec) -> Result<SplitMasks> {
        match spec.mode {
            SplitMode::Standard => {
                if self.masks.train.iter().any(|&b| b) {
                    Ok(self.masks.clone())
                } else {
                    Err(TgsError::EmptyMask("dataset ships no standard split".into()))
                }
            }
            SplitMode::PerClass => self.per_class_split(spec),
        }
    }

    fn per_class_split(&self, spec: &SplitSpec) -> Result<SplitMasks> {
        let n = self.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut by_class: Vec<Vec<NodeId>> = vec![Vec::new(); self.n_classes];
        for (v, &y) in self.labels.iter().enumerate() {
            by_class[y].push(v);
        }
        let mut train = Vec::new();
        let mut rest = Vec::new();
        for (class, members) in by_class.iter_mut().enumerate() {
            if members.len() < spec.labels_per_class {
                return Err(TgsError::InsufficientClass {
                    class,
                    available: members.len(),
                    requested: spec.labels_per_class,
                });
            }
            members.shuffle(&mut rng);
            train.extend_from_slice(&members[..spec.labels_per_class]);
            rest.extend_from_slice(&members[spec.labels_per_class..]);
        }
        rest.sort_unstable();
        rest.shuffle(&mut rng);
        if rest.len() < spec.val_size + spec.test_size {
            return Err(TgsError::InvalidArgument(format!(
                "{} nodes left after training selection, {} + {} requested",
                rest.len(),
                spec.val_size,
                spec.test_size
            )));
        }
        let val = &rest[..spec.val_size];
        let test = &rest[spec.val_size..spec.val_size + spec.test_size];
        Ok(SplitMasks::from_ids(n, &train, val, test))
    }

    /// Keeps `k` randomly chosen training labels per class from the current
    /// training set; the other training nodes become unlabeled. Validation and
    /// test masks are untouched.
    pub fn limit_train_labels(&self, k: usize, seed: u64) -> Result<SplitMasks> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<NodeId>> = vec![Vec::new(); self.n_classes];
        for v in self.masks.train_ids() {
            by_class[self.labels[v]].push(v);
        }
        let mut masks = self.masks.clone();
        masks.train.iter_mut().for_each(|b| *b = false);
        for (class, members) in by_class.iter_mut().enumerate() {
            if members.len() < k {
                return Err(TgsError::InsufficientClass { class, available: members.len(), requested: k });
            }
            members.shuffle(&mut rng);
            for &v in &members[..k] {
                masks.train[v] = true;
            }
        }
        Ok(masks)
    }

    /// Flips `round(ratio · |train|)` randomly chosen training labels, each to
    /// a uniformly chosen different class. Non-training labels are left
    /// bit-identical.
    pub fn inject_label_noise(&self, spec: &NoiseSpec) -> Result<Self> {
        if !(0.0..1.0).contains(&spec.ratio) {
            return Err(TgsError::InvalidArgument(format!("noise ratio {} outside [0, 1)", spec.ratio)));
        }
        let mut labels = self.labels.clone();
        if self.n_classes >= 2 && spec.ratio > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut ids = self.masks.train_ids();
            ids.shuffle(&mut rng);
            let flips = (spec.ratio * ids.len() as f64).round() as usize;
            for &v in &ids[..flips] {
                let shift = rng.gen_range(1..self.n_classes);
                labels[v] = (labels[v] + shift) % self.n_classes;
            }
        }
        Ok(Self { labels, ..self.clone() })
    }

    /// Nodes at exactly two hops from `v` (not `v`, not a direct neighbor).
    pub fn two_hop(&self, v: NodeId) -> Vec<NodeId> {
        let direct = self.adjacency.neighbors(v);
        let mut out = BTreeSet::new();
        for &u in direct {
            for &w in self.adjacency.neighbors(u) {
                if w != v && direct.binary_search(&w).is_err() {
                    out.insert(w);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Index of the most frequent label (lowest on ties).
    pub fn majority_class(&self) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        let mut best = 0;
        for (c, &k) in counts.iter().enumerate() {
            if k > counts[best] {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy(n: usize, edges: &[(usize, usize)], classes: usize) -> GraphStore {
        let (csr, _) = Csr::from_undirected(n, edges).unwrap();
        let labels = (0..n).map(|v| v % classes).collect();
        GraphStore::new(DenseMatrix::zeros(n, 2), csr, labels, classes, SplitMasks::empty(n)).unwrap()
    }

    #[test]
    fn two_node_graph_csr_layout() {
        let (csr, loops) = Csr::from_undirected(2, &[(0, 1)]).unwrap();
        assert_eq!(loops, 0);
        assert_eq!(csr.offsets(), &[0, 1, 2]);
        assert_eq!(csr.columns(), &[1, 0]);
        assert_eq!(csr.neighbors(0), &[1]);
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let (csr, loops) = Csr::from_undirected(4, &[(3, 3), (0, 1), (1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(loops, 1);
        assert_eq!(csr.n_edges(), 2);
        assert!(csr.neighbors(3).is_empty());
        assert_eq!(csr.neighbors(1), &[0, 2]);
        assert_eq!(csr.undirected_edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn neighbors_rejects_out_of_range() {
        let g = toy(3, &[(0, 1)], 2);
        assert!(g.neighbors(2).unwrap().is_empty());
        assert!(matches!(g.neighbors(3), Err(TgsError::NodeOutOfRange { node: 3, nodes: 3 })));
    }

    #[test]
    fn star_degree_distribution() {
        let g = toy(4, &[(0, 1), (0, 2), (0, 3)], 2);
        let p = g.degree_distribution().unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        for leaf in 1..4 {
            assert!((p[leaf] - 1.0 / 6.0).abs() < 1e-15);
        }
        let ring = toy(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], 2);
        assert!(ring.degree_distribution().unwrap().iter().all(|&q| (q - 0.2).abs() < 1e-15));
        assert!(matches!(toy(3, &[], 2).degree_distribution(), Err(TgsError::EmptyEdgeSet)));
    }

    #[test]
    fn per_class_split_counts_and_determinism() {
        let n = 700;
        let g = toy(n, &[(0, 1)], 7);
        let spec = SplitSpec::per_class(20, 100, 200, 3);
        let a = g.make_split(&spec).unwrap();
        assert_eq!(a.train_ids().len(), 140);
        assert_eq!(a.val_ids().len(), 100);
        assert_eq!(a.test_ids().len(), 200);
        assert!(a.first_overlap().is_none());
        assert_eq!(a, g.make_split(&spec).unwrap());
        let five = g.make_split(&SplitSpec::per_class(5, 100, 200, 3)).unwrap();
        assert_eq!(five.train_ids().len(), 35);
        let err = g.make_split(&SplitSpec::per_class(101, 0, 0, 0)).unwrap_err();
        assert!(matches!(err, TgsError::InsufficientClass { class: 0, available: 100, requested: 101 }));
    }

    #[test]
    fn limited_labels_subset_training_set() {
        let g = toy(700, &[(0, 1)], 7);
        let masks = g.make_split(&SplitSpec::per_class(20, 100, 200, 1)).unwrap();
        let g = g.with_masks(masks.clone()).unwrap();
        let limited = g.limit_train_labels(5, 9).unwrap();
        let ids = limited.train_ids();
        assert_eq!(ids.len(), 35);
        assert!(ids.iter().all(|&v| masks.train[v]));
        assert_eq!(limited.val, masks.val);
        assert_eq!(limited.test, masks.test);
    }

    #[test]
    fn noise_only_touches_training_labels() {
        let g = toy(700, &[(0, 1)], 7);
        let g = g.with_masks(g.make_split(&SplitSpec::per_class(20, 100, 200, 1)).unwrap()).unwrap();
        let same = g.inject_label_noise(&NoiseSpec { ratio: 0.0, seed: 1 }).unwrap();
        assert_eq!(same.labels(), g.labels());
        let noisy = g.inject_label_noise(&NoiseSpec { ratio: 0.5, seed: 1 }).unwrap();
        let again = g.inject_label_noise(&NoiseSpec { ratio: 0.5, seed: 1 }).unwrap();
        assert_eq!(noisy.labels(), again.labels());
        let flipped = (0..700).filter(|&v| noisy.labels()[v] != g.labels()[v]).count();
        assert_eq!(flipped, 70);
        for v in 0..700 {
            if !g.masks().train[v] {
                assert_eq!(noisy.labels()[v], g.labels()[v]);
            }
        }
        assert!(g.inject_label_noise(&NoiseSpec { ratio: 1.0, seed: 1 }).is_err());
    }

    #[test]
    fn two_hop_excludes_self_and_direct_neighbors() {
        // 0-1-2-3 path plus 0-2 chord
        let g = toy(4, &[(0, 1), (1, 2), (2, 3), (0, 2)], 2);
        assert_eq!(g.two_hop(0), vec![3]);
        assert_eq!(g.two_hop(3), vec![0, 1]);
    }
}
