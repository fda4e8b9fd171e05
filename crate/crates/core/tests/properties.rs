use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgs_core::graph::{Csr, GraphStore, SplitMasks};
use tgs_core::layers::{log_sum_exp, softmax_into};
use tgs_core::sampler::{EdgeSampler, NegativeKind};
use tgs_core::DenseMatrix;

fn pairs(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..4 * n)))
}

fn store(n: usize, pairs: &[(usize, usize)]) -> GraphStore {
    let (adj, _) = Csr::from_undirected(n, pairs).unwrap();
    let x = DenseMatrix::zeros(n, 1);
    GraphStore::new(x, adj, vec![0; n], 1, SplitMasks::empty(n)).unwrap()
}

proptest! {
    #[test]
    fn csr_is_symmetric_sorted_and_loop_free((n, p) in pairs(30)) {
        let (adj, loops) = Csr::from_undirected(n, &p).unwrap();
        prop_assert_eq!(loops, p.iter().filter(|(a, b)| a == b).count());
        let expected: BTreeSet<(usize, usize)> =
            p.iter().filter(|(a, b)| a != b).map(|&(a, b)| (a.min(b), a.max(b))).collect();
        prop_assert_eq!(adj.n_edges(), expected.len());
        prop_assert_eq!(adj.undirected_edges(), expected.iter().copied().collect::<Vec<_>>());
        for v in 0..n {
            let row = adj.neighbors(v);
            prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(!row.contains(&v));
            for &u in row {
                prop_assert!(adj.neighbors(u).contains(&v));
            }
        }
        prop_assert_eq!((0..n).map(|v| adj.degree(v)).sum::<usize>(), 2 * expected.len());
    }

    #[test]
    fn softmax_is_a_distribution(row in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
        let mut p = vec![0.0; row.len()];
        softmax_into(&row, &mut p);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = row.iter().map(|x| x + shift).collect();
        let mut q = vec![0.0; row.len()];
        softmax_into(&shifted, &mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lse = log_sum_exp(&row);
        for (x, pi) in row.iter().zip(&p) {
            prop_assert!((pi.ln() - (x - lse)).abs() < 1e-9 || *pi < 1e-300);
        }
    }

    #[test]
    fn sampler_covers_each_edge_once((n, p) in pairs(25), batch in 1usize..20, per_edge in 0usize..3, seed in any::<u64>()) {
        let g = store(n, &p);
        prop_assume!(g.n_edges() > 0);
        let sampler = EdgeSampler::new(&g, batch, NegativeKind::Uniform, per_edge, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = sampler.epoch(g.adjacency(), &mut rng).unwrap();
        let mut seen: Vec<(usize, usize)> = batches.iter().flat_map(|b| b.edges.iter().copied()).collect();
        prop_assert!(batches.iter().all(|b| b.len() <= batch && !b.is_empty()));
        prop_assert_eq!(batches.len(), g.n_edges().div_ceil(batch));
        seen.sort_unstable();
        prop_assert_eq!(seen, g.adjacency().undirected_edges());
        for b in &batches {
            prop_assert_eq!(b.negatives.len(), b.len() * per_edge);
            prop_assert!(b.negatives.iter().all(|&(a, c)| a < n && c < n));
        }
    }

    #[test]
    fn filtered_negatives_avoid_neighbors((n, p) in pairs(25), seed in any::<u64>()) {
        let g = store(n, &p);
        prop_assume!(g.n_edges() > 0);
        // Degree-weighted draws only reach linked nodes, so every endpoint
        // needs a linked non-neighbor for the filter to succeed.
        let adj = g.adjacency();
        prop_assume!((0..n)
            .filter(|&v| g.degree(v) > 0)
            .all(|v| (0..n).any(|k| k != v && g.degree(k) > 0 && !adj.has_edge(v, k))));
        let sampler = EdgeSampler::new(&g, 8, NegativeKind::Degree, 2, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in sampler.epoch(adj, &mut rng).unwrap() {
            for (e, &(i, j)) in b.edges.iter().enumerate() {
                for &(ki, kj) in b.negatives_for(e) {
                    prop_assert!(ki != i && !adj.has_edge(i, ki));
                    prop_assert!(kj != j && !adj.has_edge(j, kj));
                    prop_assert!(g.degree(ki) > 0 && g.degree(kj) > 0);
                }
            }
        }
    }
}
