#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgs_core::graph::{Csr, GraphStore, SplitMasks};
use tgs_core::model::{compute_loss, full_graph_loss, LossOptions, LossPlan, ModelDims, TgsParams};
use tgs_core::optim::Parameters;
use tgs_core::sparse::SparseMatrix;
use tgs_core::DenseMatrix;

/// Random simple graph on `n` nodes with exactly `m` edges and no isolated
/// node: a random spanning tree first, then extra random pairs.
pub fn random_connected_graph(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    assert!(m + 1 >= n && m <= n * (n - 1) / 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        let (a, b) = (order[k], parent);
        edges.insert((a.min(b), a.max(b)));
    }
    while edges.len() < m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    edges.into_iter().collect()
}

pub fn random_store(n: usize, m: usize, d: usize, classes: usize, seed: u64) -> GraphStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_connected_graph(n, m, &mut rng);
    let (adj, _) = Csr::from_undirected(n, &edges).unwrap();
    let x = DenseMatrix::from_fn(n, d, |_, _| if rng.gen_bool(0.7) { rng.gen_range(-1.0..1.0) } else { 0.0 });
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let mut train: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
    if train.is_empty() {
        train.push(0);
    }
    let masks = SplitMasks::from_ids(n, &train, &[], &[]);
    GraphStore::new(x, adj, labels, classes, masks).unwrap()
}

pub fn random_params(d: usize, hidden: usize, classes: usize, layers: usize, seed: u64) -> TgsParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = TgsParams::init(ModelDims { input: d, hidden, classes, layers }, &mut rng).unwrap();
    // Move BN affine terms and head biases off their defaults so their gradients are exercised.
    for bn in &mut p.batchnorms {
        bn.scale.iter_mut().for_each(|s| *s = rng.gen_range(0.5..1.5));
        bn.shift.iter_mut().for_each(|s| *s = rng.gen_range(-0.5..0.5));
    }
    p.head_f.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
    p.head_g.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
    p.attention.iter_mut().for_each(|a| *a *= 3.0);
    p
}

/// Largest relative error between analytic and central finite-difference
/// gradients over every trainable entry, with the parameter name it occurred in.
/// Dropout masks are replayed by reseeding before every evaluation.
pub fn max_gradient_error(
    params: &TgsParams,
    x: &SparseMatrix,
    plan: &LossPlan,
    opts: &LossOptions,
    seed: u64,
) -> (f64, String) {
    let eval = |p: &TgsParams| {
        let mut p = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        compute_loss(&mut p, x, plan, opts, &mut rng, true).unwrap()
    };
    let (_, grads) = eval(params);
    let grads = grads.unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let n_tensors = analytic.len();
    for t in 0..n_tensors {
        let len = analytic[t].1.len();
        for k in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1[k] -= h;
            let numeric = (eval(&plus).0.total - eval(&minus).0.total) / (2.0 * h);
            let a = analytic[t].1[k];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-6 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            if err > worst.0 {
                worst = (err, format!("{}[{k}] analytic {a:.3e} numeric {numeric:.3e}", analytic[t].0));
            }
        }
    }
    worst
}

/// Compares the enumerated full-edge batch loss with the node-wise full-graph
/// loss on a random connected graph of at most 8 nodes. The batch weights node
/// `i` by `d_i / |E|` where the full-graph loss uses `1 / N`, so the per-node
/// feature terms are reweighted before comparing. Tolerance 1e-10 relative.
pub fn oracle_mismatch(seed: u64, opts: LossOptions) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=8);
    let m = rng.gen_range(n - 1..=n * (n - 1) / 2);
    let d = rng.gen_range(1..=5);
    let classes = rng.gen_range(2..=4);
    let hidden = rng.gen_range(1..=4);
    let layers = rng.gen_range(1..=3);
    let g = random_store(n, m, d, classes, seed);
    let mut params = random_params(d, hidden, classes, layers, seed + 1000);
    let plan = LossPlan::enumerated(g.adjacency(), g.labels(), &g.masks().train, &opts);
    let x = SparseMatrix::from_dense(g.features());
    let (batch, _) = compute_loss(&mut params, &x, &plan, &opts, &mut rng, false).map_err(|e| e.to_string())?;
    let full = full_graph_loss(&params, &g, &opts).map_err(|e| e.to_string())?;

    let edges = g.n_edges() as f64;
    let reweighted: f64 =
        full.per_node_feature.iter().enumerate().map(|(i, p)| g.degree(i) as f64 * p).sum::<f64>() / edges;
    let total = full.label + opts.alpha * reweighted;
    for (what, a, b) in
        [("feature", batch.feature, reweighted), ("label", batch.label, full.label), ("total", batch.total, total)]
    {
        if (a - b).abs() > 1e-10 * a.abs().max(b.abs()).max(1.0) {
            return Err(format!("seed {seed} (n={n}, m={m}): {what} {a} vs {b}"));
        }
    }
    Ok(())
}
