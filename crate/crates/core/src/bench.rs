//! Inference timing: MLP inference against full-graph and single-node GCN
//! inference, per depth.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::eval::mean_std;
use crate::gcn::{gcn_full_forward, CachePolicy, GcnNorm, GcnParams, SingleNodeEngine};
use crate::graph::{GraphStore, NodeId};
use crate::model::{logits_f, ModelDims, TgsParams};
use crate::sparse::SparseMatrix;
use crate::synthetic::{DegreeModel, SyntheticSpec};
use crate::trainer::{stream, STREAM_INIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub warmup: usize,
    pub depths: Vec<usize>,
    /// Number of query nodes answered per repetition.
    pub node_sample: usize,
    pub hidden: usize,
    pub graph: SyntheticSpec,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repetitions: 30,
            warmup: 3,
            depths: vec![2, 3, 4],
            node_sample: 100,
            hidden: 16,
            graph: SyntheticSpec {
                nodes: 2000,
                avg_degree: 10.0,
                model: DegreeModel::RegularIsh,
                features: 64,
                classes: 4,
            },
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.warmup == 0 {
            return Err(TgsError::InvalidArgument("repetitions and warmup must be at least 1".into()));
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return Err(TgsError::InvalidArgument("depths must be a non-empty list of positive values".into()));
        }
        if self.node_sample == 0 || self.hidden == 0 {
            return Err(TgsError::InvalidArgument("node_sample and hidden must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TgsMlp,
    GcnFull,
    GcnSingleNode,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Method::TgsMlp => "tgs-mlp",
            Method::GcnFull => "gcn-full",
            Method::GcnSingleNode => "gcn-single-node",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: Method,
    pub depth: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Rows read through the adjacency per repetition: neighbor rows
    /// aggregated for `gcn-full`, feature rows materialized for
    /// `gcn-single-node`, always 0 for `tgs-mlp`.
    pub fetches: u64,
    /// `gcn-full` mean over this record's mean, at the same depth.
    pub speedup: f64,
}

pub const CSV_HEADER: &str = "method,depth,mean_ms,std_ms,fetches,speedup";

pub fn to_csv(records: &[TimingRecord]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{},{:.3}\n",
            r.method.id(),
            r.depth,
            r.mean_ms,
            r.std_ms,
            r.fetches,
            r.speedup
        ));
    }
    s
}

/// Fixed-width table for terminals.
pub fn render_table(records: &[TimingRecord]) -> String {
    let mut s = format!(
        "{:<16} {:>5} {:>12} {:>10} {:>10} {:>9}\n",
        "method", "depth", "mean ms", "std ms", "fetches", "speedup"
    );
    for r in records {
        s.push_str(&format!(
            "{:<16} {:>5} {:>12.4} {:>10.4} {:>10} {:>8.2}x\n",
            r.method.id(),
            r.depth,
            r.mean_ms,
            r.std_ms,
            r.fetches,
            r.speedup
        ));
    }
    s
}

/// Times `run` after `warmup` untimed calls; returns mean and sample standard
/// deviation in milliseconds.
pub fn time_ms(repetitions: usize, warmup: usize, mut run: impl FnMut()) -> (f64, f64) {
    for _ in 0..warmup {
        run();
    }
    let samples: Vec<f64> = (0..repetitions)
        .map(|_| {
            let t = Instant::now();
            run();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    mean_std(&samples)
}

/// Randomly initialized models of the requested depth; timing does not depend
/// on trained values.
pub fn bench_models(g: &GraphStore, hidden: usize, depth: usize, seed: u64) -> Result<(TgsParams, GcnParams)> {
    let dims = ModelDims { input: g.n_features(), hidden, classes: g.n_classes(), layers: depth };
    let tgs = TgsParams::init(dims, &mut stream(seed, STREAM_INIT))?;
    let gcn = GcnParams::init(g.n_features(), hidden, g.n_classes(), depth, &mut stream(seed, STREAM_INIT))?;
    Ok((tgs, gcn))
}

/// Times answering `queries` with randomly initialized models of one depth.
pub fn time_inference(
    g: &GraphStore,
    queries: &[NodeId],
    depth: usize,
    cfg: &BenchConfig,
) -> Result<Vec<TimingRecord>> {
    let (tgs, gcn) = bench_models(g, cfg.hidden, depth, cfg.seed)?;
    time_models(g, queries, &tgs, &gcn, cfg)
}

/// Times answering `queries` with each method.
///
/// `tgs-mlp` runs the MLP on the query rows alone, `gcn-full` runs one
/// full-graph forward pass and reads the query rows, and `gcn-single-node`
/// expands each query's neighborhood separately. Records carry the GCN depth.
pub fn time_models(
    g: &GraphStore,
    queries: &[NodeId],
    tgs: &TgsParams,
    gcn: &GcnParams,
    cfg: &BenchConfig,
) -> Result<Vec<TimingRecord>> {
    if queries.is_empty() {
        return Err(TgsError::InvalidArgument("no query nodes".into()));
    }
    if let Some(&v) = queries.iter().find(|&&v| v >= g.n_nodes()) {
        return Err(TgsError::NodeOutOfRange { node: v, nodes: g.n_nodes() });
    }
    let x = SparseMatrix::from_dense(g.features());
    let norm = GcnNorm::new(g.adjacency());
    let query_rows: Vec<SparseMatrix> = queries.iter().map(|&v| x.gather_rows(&[v])).collect();
    logits_f(tgs, &query_rows[0])?;
    gcn_full_forward(gcn, g, &norm, &x)?;
    let depth = gcn.depth();

    let (mlp_mean, mlp_std) = time_ms(cfg.repetitions, cfg.warmup, || {
        for row in &query_rows {
            black_box(logits_f(tgs, row).expect("shapes checked"));
        }
    });
    let (full_mean, full_std) = time_ms(cfg.repetitions, cfg.warmup, || {
        let logits = gcn_full_forward(gcn, g, &norm, &x).expect("shapes checked");
        for &v in queries {
            black_box(logits.row(v));
        }
    });
    let mut single_fetches = 0u64;
    let (single_mean, single_std) = time_ms(cfg.repetitions, cfg.warmup, || {
        let mut engine = SingleNodeEngine::new(gcn, g, CachePolicy::PerQuery).expect("shapes checked");
        single_fetches = queries.iter().map(|&v| engine.infer(v).expect("valid node").fetches as u64).sum();
    });
    let full_fetches = (depth * (2 * g.n_edges() + g.n_nodes())) as u64;
    Ok(vec![
        record(Method::TgsMlp, tgs.dims().layers, mlp_mean, mlp_std, 0, full_mean),
        record(Method::GcnFull, depth, full_mean, full_std, full_fetches, full_mean),
        record(Method::GcnSingleNode, depth, single_mean, single_std, single_fetches, full_mean),
    ])
}

fn record(method: Method, depth: usize, mean_ms: f64, std_ms: f64, fetches: u64, baseline: f64) -> TimingRecord {
    TimingRecord { method, depth, mean_ms, std_ms, fetches, speedup: baseline / mean_ms }
}

/// Whole-graph inference: the MLP over every feature row against the
/// full-graph GCN forward pass.
pub fn time_batch_inference(g: &GraphStore, depth: usize, cfg: &BenchConfig) -> Result<Vec<TimingRecord>> {
    let (tgs, gcn) = bench_models(g, cfg.hidden, depth, cfg.seed)?;
    let x = SparseMatrix::from_dense(g.features());
    let norm = GcnNorm::new(g.adjacency());
    let features = &x;
    let (mlp_mean, mlp_std) = time_ms(cfg.repetitions, cfg.warmup, || {
        black_box(logits_f(&tgs, features).expect("shapes checked"));
    });
    let (full_mean, full_std) = time_ms(cfg.repetitions, cfg.warmup, || {
        black_box(gcn_full_forward(&gcn, g, &norm, &x).expect("shapes checked"));
    });
    let full_fetches = (depth * (2 * g.n_edges() + g.n_nodes())) as u64;
    Ok(vec![
        record(Method::TgsMlp, depth, mlp_mean, mlp_std, 0, full_mean),
        record(Method::GcnFull, depth, full_mean, full_std, full_fetches, full_mean),
    ])
}

/// The first `cfg.node_sample` nodes of a seeded shuffle.
pub fn sample_queries(g: &GraphStore, cfg: &BenchConfig) -> Vec<NodeId> {
    use rand::seq::SliceRandom;
    let mut ids: Vec<NodeId> = (0..g.n_nodes()).collect();
    ids.shuffle(&mut stream(cfg.seed, 3));
    ids.truncate(cfg.node_sample);
    ids
}

/// [`time_inference`] at every configured depth.
pub fn depth_sweep(g: &GraphStore, queries: &[NodeId], cfg: &BenchConfig) -> Result<Vec<TimingRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(3 * cfg.depths.len());
    for &d in &cfg.depths {
        out.extend(time_inference(g, queries, d, cfg)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`. A perfect fit of
/// constant data has `r_squared` 1.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(TgsError::InvalidArgument("linear fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(TgsError::InvalidArgument("linear fit needs distinct x values".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gen_synthetic;

    fn quick() -> BenchConfig {
        BenchConfig {
            repetitions: 2,
            warmup: 1,
            depths: vec![2],
            node_sample: 5,
            graph: SyntheticSpec { nodes: 60, avg_degree: 4.0, ..SyntheticSpec::default() },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn single_repetition_has_zero_std() {
        let (_, s) = time_ms(1, 1, || {
            black_box(1 + 1);
        });
        assert_eq!(s, 0.0);
    }

    #[test]
    fn one_depth_gives_three_records() {
        let cfg = quick();
        let g = gen_synthetic(&cfg.graph, &mut stream(1, 0)).unwrap();
        let recs = depth_sweep(&g, &sample_queries(&g, &cfg), &cfg).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].fetches, 0);
        assert!(recs.iter().all(|r| r.mean_ms >= 0.0 && r.std_ms >= 0.0));
        assert!((recs[1].speedup - 1.0).abs() < 1e-12);
        let csv = to_csv(&recs);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let f = linear_fit(&[2.0, 3.0, 4.0], &[5.0, 7.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(BenchConfig { warmup: 0, ..quick() }.validate().is_err());
        assert!(BenchConfig { depths: vec![], ..quick() }.validate().is_err());
    }
}
