//! Training loop: shuffled edge batches, Adam, best-validation selection.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::eval::{accuracy, mean_hop_cosine, mean_std};
use crate::graph::{GraphStore, NodeId};
use crate::layers::cross_entropy_row;
use crate::model::{compute_loss, logits_f, LossBreakdown, LossOptions, LossPlan, ModelDims, TgsParams};
use crate::optim::{AdamState, WeightDecay};
use crate::sampler::{EdgeSampler, NegativeKind};
use crate::sparse::SparseMatrix;

/// Independent random streams derived from one seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_SAMPLER: u64 = 1;
pub(crate) const STREAM_DROPOUT: u64 = 2;

/// ChaCha8 generator for stream `id` of `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecay,
    pub epochs: usize,
    pub layers: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub seed: u64,
    pub no_negatives: bool,
    pub no_mixup_augment: bool,
    pub no_label_sd: bool,
    pub negative_dist: NegativeKind,
    pub negatives_per_edge: usize,
    pub filter_negative_collisions: bool,
    pub normalize_positive_term: bool,
    /// Epoch interval of the cosine probe; 0 disables it.
    pub probe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            weight_decay_mode: WeightDecay::Coupled,
            epochs: 200,
            layers: 2,
            hidden: 256,
            batch_size: 256,
            alpha: 1.0,
            dropout: 0.5,
            seed: 0,
            no_negatives: false,
            no_mixup_augment: false,
            no_label_sd: false,
            negative_dist: NegativeKind::Uniform,
            negatives_per_edge: 1,
            filter_negative_collisions: false,
            normalize_positive_term: false,
            probe_every: 0,
        }
    }
}

impl TrainConfig {
    /// Plain MLP classification: no feature term and no neighbor supervision.
    pub fn vanilla_mlp(&self) -> Self {
        Self { alpha: 0.0, no_label_sd: true, ..self.clone() }
    }

    pub fn is_vanilla(&self) -> bool {
        self.alpha == 0.0 && self.no_label_sd
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TgsError::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("layers and hidden must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.negatives_per_edge == 0 && !self.no_negatives {
            return bad("negatives_per_edge must be at least 1".into());
        }
        Ok(())
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            alpha: self.alpha,
            dropout: self.dropout,
            no_negatives: self.no_negatives,
            no_mixup_augment: self.no_mixup_augment,
            no_label_sd: self.no_label_sd,
            normalize_positive_term: self.normalize_positive_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Edge batches with feature and label self-distillation.
    Tgs,
    /// One full-batch cross-entropy step per epoch over the labeled nodes.
    VanillaMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetSummary {
    pub fn of(g: &GraphStore) -> Self {
        let m = g.masks();
        Self {
            nodes: g.n_nodes(),
            edges: g.n_edges(),
            features: g.n_features(),
            classes: g.n_classes(),
            train: m.train_ids().len(),
            val: m.val_ids().len(),
            test: m.test_ids().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean over the optimizer steps of the epoch.
    pub loss: LossBreakdown,
    /// Evaluation-mode cross-entropy of head `f`.
    pub train_ce: f64,
    pub val_ce: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Mean cosine similarity of head-`f` logits to 1-hop and 2-hop neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub epoch: usize,
    pub hop1: f64,
    pub hop2: f64,
}

/// Everything measured in one training run. Contains no wall-clock values, so
/// two runs with the same inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub dataset: DatasetSummary,
    /// Epoch of the returned parameters (best validation accuracy, earliest on ties).
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub final_val_accuracy: f64,
    pub final_test_accuracy: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    pub probes: Vec<ProbeRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-epoch learning curve as CSV.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,total,label,feature,positive,negative,train_ce,val_ce,train_acc,val_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.loss.total,
                e.loss.label,
                e.loss.feature,
                e.loss.positive,
                e.loss.negative,
                e.train_ce,
                e.val_ce,
                e.train_accuracy,
                e.val_accuracy
            ));
        }
        s
    }

    pub fn probe_csv(&self) -> String {
        let mut s = String::from("epoch,hop1,hop2\n");
        for p in &self.probes {
            s.push_str(&format!("{},{},{}\n", p.epoch, p.hop1, p.hop2));
        }
        s
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: TgsParams,
    pub final_params: TgsParams,
    pub report: RunReport,
    pub seconds: f64,
}

/// Runs a full training with the parameters drawn from `cfg.seed`.
pub fn train(g: &GraphStore, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_recovery(g, cfg, None)
}

/// Like [`train`]; on divergence the last finite parameters are written to
/// `recovery` (when given) before the error is returned.
pub fn train_with_recovery(g: &GraphStore, cfg: &TrainConfig, recovery: Option<PathBuf>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let train_ids = g.masks().train_ids();
    let val_ids = g.masks().val_ids();
    if train_ids.is_empty() {
        return Err(TgsError::EmptyMask("training mask is empty".into()));
    }
    if val_ids.is_empty() {
        return Err(TgsError::EmptyMask("validation mask is empty".into()));
    }
    let vanilla = cfg.is_vanilla();
    let features = SparseMatrix::from_dense(g.features());
    let dims = ModelDims { input: g.n_features(), hidden: cfg.hidden, classes: g.n_classes(), layers: cfg.layers };
    let mut params = TgsParams::init(dims, &mut stream(cfg.seed, STREAM_INIT))?;
    let mut sample_rng = stream(cfg.seed, STREAM_SAMPLER);
    let mut dropout_rng = stream(cfg.seed, STREAM_DROPOUT);
    let opts = cfg.loss_options();
    let sampler = if vanilla {
        None
    } else {
        if g.n_edges() == 0 {
            return Err(TgsError::EmptyEdgeSet);
        }
        let per_edge = if cfg.no_negatives { 0 } else { cfg.negatives_per_edge };
        Some(EdgeSampler::new(g, cfg.batch_size, cfg.negative_dist, per_edge, cfg.filter_negative_collisions)?)
    };
    let supervised = LossPlan::supervised(&train_ids, g.labels());
    let mut adam = AdamState::default();

    let mut eval_ids: Vec<NodeId> = train_ids.iter().chain(&val_ids).copied().collect();
    eval_ids.sort_unstable();
    let eval_rows = features.gather_rows(&eval_ids);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut probes = Vec::new();
    if cfg.probe_every > 0 {
        probes.push(probe(&params, &features, g, 0)?);
    }
    let mut best: Option<(f64, usize, TgsParams)> = None;
    for epoch in 1..=cfg.epochs {
        let plans: Vec<LossPlan> = match &sampler {
            None => vec![supervised.clone()],
            Some(s) => s
                .epoch(g.adjacency(), &mut sample_rng)?
                .iter()
                .map(|b| LossPlan::from_batch(b, g.labels(), &g.masks().train, &opts))
                .collect(),
        };
        let mut sum = LossBreakdown::default();
        for plan in &plans {
            let last_good = params.clone();
            let step =
                compute_loss(&mut params, &features, plan, &opts, &mut dropout_rng, true).and_then(|(l, grads)| {
                    let grads = grads.ok_or(TgsError::MissingCache("gradients"))?;
                    adam.step(&mut params, &grads, cfg.lr, cfg.weight_decay, cfg.weight_decay_mode)?;
                    Ok(l)
                });
            let loss = match step {
                Ok(l) if params.is_finite() => l,
                Ok(_) => return diverged(epoch, "parameters became non-finite".into(), &last_good, &recovery),
                Err(e @ (TgsError::NonFinite { .. } | TgsError::NonFiniteGradient(_))) => {
                    return diverged(epoch, e.to_string(), &last_good, &recovery)
                }
                Err(e) => return Err(e),
            };
            for (acc, x) in [
                (&mut sum.total, loss.total),
                (&mut sum.label, loss.label),
                (&mut sum.feature, loss.feature),
                (&mut sum.positive, loss.positive),
                (&mut sum.negative, loss.negative),
                (&mut sum.label_self, loss.label_self),
                (&mut sum.label_neighbor, loss.label_neighbor),
            ] {
                *acc += x;
            }
        }
        let k = plans.len() as f64;
        let mean = LossBreakdown {
            total: sum.total / k,
            label: sum.label / k,
            feature: sum.feature / k,
            positive: sum.positive / k,
            negative: sum.negative / k,
            label_self: sum.label_self / k,
            label_neighbor: sum.label_neighbor / k,
        };

        let logits = logits_f(&params, &eval_rows)?;
        let split_stats = |ids: &[NodeId]| {
            let mut ce = 0.0;
            let mut correct = 0usize;
            for &v in ids {
                let r = eval_ids.binary_search(&v).expect("evaluated node");
                ce += cross_entropy_row(logits.row(r), g.labels()[v]);
                correct += usize::from(crate::matrix::argmax(logits.row(r)) == g.labels()[v]);
            }
            (ce / ids.len() as f64, correct as f64 / ids.len() as f64)
        };
        let (train_ce, train_accuracy) = split_stats(&train_ids);
        let (val_ce, val_accuracy) = split_stats(&val_ids);
        log::debug!(
            "epoch {epoch}: loss {:.4} (label {:.4}, feature {:.4}) val acc {:.4}",
            mean.total,
            mean.label,
            mean.feature,
            val_accuracy
        );
        epochs.push(EpochRecord {
            epoch,
            steps: plans.len(),
            loss: mean,
            train_ce,
            val_ce,
            train_accuracy,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, params.clone()));
        }
        if cfg.probe_every > 0 && (epoch % cfg.probe_every == 0 || epoch == cfg.epochs) {
            probes.push(probe(&params, &features, g, epoch)?);
        }
    }

    let (val_accuracy, best_epoch, best_params) = best.expect("at least one epoch");
    let test_accuracy = test_accuracy_of(&best_params, &features, g)?;
    let final_test_accuracy = test_accuracy_of(&params, &features, g)?;
    let report = RunReport {
        mode: if vanilla { TrainMode::VanillaMlp } else { TrainMode::Tgs },
        config: cfg.clone(),
        dataset: DatasetSummary::of(g),
        best_epoch,
        val_accuracy,
        test_accuracy,
        final_val_accuracy: epochs.last().map_or(0.0, |e| e.val_accuracy),
        final_test_accuracy,
        epochs,
        probes,
    };
    log::info!(
        "trained {:?} in {:.1}s: best epoch {best_epoch}, val {:.4}, test {:?}",
        report.mode,
        started.elapsed().as_secs_f64(),
        val_accuracy,
        report.test_accuracy
    );
    Ok(TrainOutcome { params: best_params, final_params: params, report, seconds: started.elapsed().as_secs_f64() })
}

fn diverged(epoch: usize, detail: String, last_good: &TgsParams, recovery: &Option<PathBuf>) -> Result<TrainOutcome> {
    let mut detail = detail;
    if let Some(path) = recovery {
        last_good.to_checkpoint().save(path)?;
        detail.push_str(&format!("; last finite parameters saved to {}", path.display()));
    }
    Err(TgsError::Divergence { epoch, detail })
}

fn test_accuracy_of(params: &TgsParams, features: &SparseMatrix, g: &GraphStore) -> Result<Option<f64>> {
    let ids = g.masks().test_ids();
    if ids.is_empty() {
        return Ok(None);
    }
    let logits = logits_f(params, &features.gather_rows(&ids))?;
    let preds = logits.argmax_rows();
    let correct = ids.iter().zip(&preds).filter(|(&v, &p)| g.labels()[v] == p).count();
    Ok(Some(correct as f64 / ids.len() as f64))
}

fn probe(params: &TgsParams, features: &SparseMatrix, g: &GraphStore, epoch: usize) -> Result<ProbeRecord> {
    let logits = logits_f(params, features)?;
    Ok(ProbeRecord { epoch, hop1: mean_hop_cosine(&logits, g, 1)?, hop2: mean_hop_cosine(&logits, g, 2)? })
}

/// Predictions of head `f` for every node.
pub fn predict_all(params: &TgsParams, g: &GraphStore) -> Result<Vec<usize>> {
    Ok(logits_f(params, &SparseMatrix::from_dense(g.features()))?.argmax_rows())
}

/// Accuracy of `params` on each split of `g`.
pub fn evaluate(params: &TgsParams, g: &GraphStore) -> Result<SplitAccuracy> {
    let preds = predict_all(params, g)?;
    let m = g.masks();
    let acc = |mask: &[bool]| accuracy(&preds, g.labels(), mask).ok();
    Ok(SplitAccuracy { train: acc(&m.train), val: acc(&m.val), test: acc(&m.test) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedReport {
    pub seeds: Vec<u64>,
    pub test_accuracies: Vec<f64>,
    pub val_accuracies: Vec<f64>,
    pub mean_test: f64,
    pub std_test: f64,
    pub mean_val: f64,
    pub std_val: f64,
    pub runs: Vec<RunReport>,
}

/// `n_runs` trainings with seeds `cfg.seed, cfg.seed + 1, …`.
pub fn run_repeated(g: &GraphStore, cfg: &TrainConfig, n_runs: usize) -> Result<RepeatedReport> {
    if n_runs == 0 {
        return Err(TgsError::InvalidArgument("n_runs must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let mut runs = Vec::with_capacity(n_runs);
    for &seed in &seeds {
        runs.push(train(g, &TrainConfig { seed, ..cfg.clone() })?.report);
    }
    Ok(RepeatedReport::from_runs(seeds, runs))
}

impl RepeatedReport {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<RunReport>) -> Self {
        let test_accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy.unwrap_or(f64::NAN)).collect();
        let val_accuracies: Vec<f64> = runs.iter().map(|r| r.val_accuracy).collect();
        let (mean_test, std_test) = mean_std(&test_accuracies);
        let (mean_val, std_val) = mean_std(&val_accuracies);
        Self { seeds, test_accuracies, val_accuracies, mean_test, std_test, mean_val, std_val, runs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::two_blobs;

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 15, hidden: 8, batch_size: 16, probe_every: 5, ..TrainConfig::default() }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { alpha: -1.0, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(TgsError::InvalidArgument(_))));
        }
    }

    #[test]
    fn same_seed_same_report() {
        let g = two_blobs(30, 6, &mut stream(3, 0)).unwrap();
        let a = train(&g, &small_cfg()).unwrap();
        let b = train(&g, &small_cfg()).unwrap();
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn best_snapshot_not_worse_than_final() {
        let g = two_blobs(30, 6, &mut stream(4, 0)).unwrap();
        let out = train(&g, &small_cfg()).unwrap();
        assert!(out.report.val_accuracy >= out.report.final_val_accuracy);
        let acc = evaluate(&out.params, &g).unwrap();
        assert_eq!(acc.val, Some(out.report.val_accuracy));
        assert_eq!(out.report.epochs.len(), 15);
        assert_eq!(out.report.probes.first().map(|p| p.epoch), Some(0));
    }

    #[test]
    fn vanilla_mode_one_step_per_epoch() {
        let g = two_blobs(20, 4, &mut stream(5, 0)).unwrap();
        let out = train(&g, &small_cfg().vanilla_mlp()).unwrap();
        assert_eq!(out.report.mode, TrainMode::VanillaMlp);
        assert!(out.report.epochs.iter().all(|e| e.steps == 1 && e.loss.feature == 0.0));
        assert!(out.report.epochs.iter().all(|e| e.loss.label_neighbor == 0.0));
    }

    #[test]
    fn repeated_statistics() {
        let g = two_blobs(20, 4, &mut stream(6, 0)).unwrap();
        let cfg = TrainConfig { epochs: 3, ..small_cfg() };
        let one = run_repeated(&g, &cfg, 1).unwrap();
        assert_eq!(one.std_val, 0.0);
        let three = run_repeated(&g, &cfg, 3).unwrap();
        assert_eq!(three.seeds, vec![0, 1, 2]);
        let m = three.val_accuracies.iter().sum::<f64>() / 3.0;
        assert!((three.mean_val - m).abs() < 1e-15);
    }
}
