//! Metrics, the neighborhood cosine probe, and the robustness and ablation
//! drivers.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TgsError};
use crate::gcn::{gcn_train, GcnConfig};
use crate::graph::{GraphStore, NoiseSpec};
use crate::matrix::{dot, DenseMatrix};
use crate::sampler::NegativeKind;
use crate::trainer::{train, TrainConfig};

/// Fraction of masked nodes whose prediction equals the label.
pub fn accuracy(preds: &[usize], labels: &[usize], mask: &[bool]) -> Result<f64> {
    if preds.len() != labels.len() || mask.len() != labels.len() {
        return Err(TgsError::Shape(format!(
            "accuracy over {} predictions, {} labels, {} mask entries",
            preds.len(),
            labels.len(),
            mask.len()
        )));
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for ((&p, &y), &m) in preds.iter().zip(labels).zip(mask) {
        if m {
            total += 1;
            correct += usize::from(p == y);
        }
    }
    if total == 0 {
        return Err(TgsError::EmptyMask("accuracy over an empty mask".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Cosine similarity; a zero vector is similar to nothing.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Mean over nodes of the mean cosine similarity between a node's embedding and
/// those of the nodes at exactly `hop` hops (1 or 2). Nodes with nobody at that
/// distance are left out of the outer mean.
pub fn mean_hop_cosine(embeddings: &DenseMatrix, g: &GraphStore, hop: usize) -> Result<f64> {
    if embeddings.rows() != g.n_nodes() {
        return Err(TgsError::Shape(format!("{} embeddings for {} nodes", embeddings.rows(), g.n_nodes())));
    }
    if hop != 1 && hop != 2 {
        return Err(TgsError::InvalidArgument(format!("hop must be 1 or 2, got {hop}")));
    }
    let mut sum = 0.0;
    let mut counted = 0usize;
    for v in 0..g.n_nodes() {
        let two;
        let ring: &[usize] = if hop == 1 {
            g.adjacency().neighbors(v)
        } else {
            two = g.two_hop(v);
            &two
        };
        if ring.is_empty() {
            continue;
        }
        let e = embeddings.row(v);
        let s: f64 = ring.iter().map(|&u| cosine(e, embeddings.row(u))).sum();
        sum += s / ring.len() as f64;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { sum / counted as f64 })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub label_counts: Vec<usize>,
    pub noise_ratios: Vec<f64>,
    /// Seeded runs per setting and method.
    pub runs: usize,
    pub train: TrainConfig,
    pub gcn: GcnConfig,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            label_counts: vec![5, 10, 15],
            noise_ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            runs: 1,
            train: TrainConfig::default(),
            gcn: GcnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Training labels kept per class.
    Labels,
    /// Fraction of training labels flipped.
    Noise,
}

/// Mean test accuracy of the three methods under one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub perturbation: Perturbation,
    pub value: f64,
    pub tgs: f64,
    pub mlp: f64,
    pub gcn: f64,
}

fn test_acc(acc: Option<f64>) -> Result<f64> {
    acc.ok_or_else(|| TgsError::EmptyMask("test mask is empty".into()))
}

/// Trains TGS, the vanilla MLP and the GCN on `g`, `runs` seeds each, and
/// returns their mean test accuracies.
pub fn compare_methods(g: &GraphStore, train_cfg: &TrainConfig, gcn_cfg: &GcnConfig, runs: usize) -> Result<[f64; 3]> {
    if runs == 0 {
        return Err(TgsError::InvalidArgument("runs must be at least 1".into()));
    }
    let mut sums = [0.0; 3];
    for k in 0..runs as u64 {
        let cfg = TrainConfig { seed: train_cfg.seed + k, ..train_cfg.clone() };
        sums[0] += test_acc(train(g, &cfg)?.report.test_accuracy)?;
        sums[1] += test_acc(train(g, &cfg.vanilla_mlp())?.report.test_accuracy)?;
        let gcfg = GcnConfig { seed: gcn_cfg.seed + k, ..gcn_cfg.clone() };
        sums[2] += test_acc(gcn_train(g, &gcfg)?.report.test_accuracy)?;
    }
    Ok(sums.map(|s| s / runs as f64))
}

/// Training set reduced to `k` labels per class; validation and test unchanged.
pub fn limited_labels(g: &GraphStore, k: usize, cfg: &RobustnessConfig) -> Result<RobustnessRow> {
    let reduced = g.with_masks(g.limit_train_labels(k, cfg.train.seed)?)?;
    let [tgs, mlp, gcn] = compare_methods(&reduced, &cfg.train, &cfg.gcn, cfg.runs)?;
    Ok(RobustnessRow { perturbation: Perturbation::Labels, value: k as f64, tgs, mlp, gcn })
}

/// A fraction `ratio` of training labels flipped; accuracy is measured against
/// the clean test labels.
pub fn label_noise(g: &GraphStore, ratio: f64, cfg: &RobustnessConfig) -> Result<RobustnessRow> {
    let noisy = g.inject_label_noise(&NoiseSpec { ratio, seed: cfg.train.seed })?;
    let [tgs, mlp, gcn] = compare_methods(&noisy, &cfg.train, &cfg.gcn, cfg.runs)?;
    Ok(RobustnessRow { perturbation: Perturbation::Noise, value: ratio, tgs, mlp, gcn })
}

pub fn robustness_suite(g: &GraphStore, cfg: &RobustnessConfig) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for &k in &cfg.label_counts {
        rows.push(limited_labels(g, k, cfg)?);
    }
    for &r in &cfg.noise_ratios {
        rows.push(label_noise(g, r, cfg)?);
    }
    Ok(rows)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut s = String::from("perturbation,value,tgs,mlp,gcn\n");
    for r in rows {
        let kind = match r.perturbation {
            Perturbation::Labels => "labels",
            Perturbation::Noise => "noise",
        };
        s.push_str(&format!("{kind},{},{:.4},{:.4},{:.4}\n", r.value, r.tgs, r.mlp, r.gcn));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoNegatives,
    NoAugment,
    NoLabelSd,
    DegreeNegatives,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoNegatives, Variant::NoAugment, Variant::NoLabelSd, Variant::DegreeNegatives];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNegatives => "w/o NS",
            Variant::NoAugment => "w/o augment",
            Variant::NoLabelSd => "w/o LSD",
            Variant::DegreeNegatives => "degree negatives",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoNegatives => cfg.no_negatives = true,
            Variant::NoAugment => cfg.no_mixup_augment = true,
            Variant::NoLabelSd => cfg.no_label_sd = true,
            Variant::DegreeNegatives => cfg.negative_dist = NegativeKind::Degree,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Removed components that did not lower accuracy.
    pub warnings: Vec<String>,
}

/// Test accuracy of every variant over `runs` seeds.
pub fn ablation_matrix(g: &GraphStore, base: &TrainConfig, runs: usize) -> Result<AblationReport> {
    if runs == 0 {
        return Err(TgsError::InvalidArgument("runs must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let cfg = variant.apply(base);
        let mut accuracies = Vec::with_capacity(runs);
        for k in 0..runs as u64 {
            let run = train(g, &TrainConfig { seed: cfg.seed + k, ..cfg.clone() })?;
            accuracies.push(test_acc(run.report.test_accuracy)?);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(AblationRow { variant, mean, std, accuracies });
    }
    let full = rows[0].mean;
    let warnings = rows
        .iter()
        .filter(|r| {
            matches!(r.variant, Variant::NoNegatives | Variant::NoAugment | Variant::NoLabelSd) && r.mean >= full
        })
        .map(|r| format!("{} scored {:.4}, not below the full model's {:.4}", r.variant.name(), r.mean, full))
        .collect();
    Ok(AblationReport { rows, warnings })
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut s = String::from("variant,mean,std\n");
    for r in &report.rows {
        s.push_str(&format!("{},{:.4},{:.4}\n", r.variant.name(), r.mean, r.std));
    }
    s
}
