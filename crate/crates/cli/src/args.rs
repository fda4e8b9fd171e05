//! Command-line surface: subcommands, config overrides and dataset lookup.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tgs_core::bench::BenchConfig;
use tgs_core::gcn::GcnConfig;
use tgs_core::optim::WeightDecay;
use tgs_core::sampler::NegativeKind;
use tgs_core::synthetic::DegreeModel;
use tgs_core::trainer::TrainConfig;

pub const DATA_ROOT_ENV: &str = "TGS_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "tgs",
    version,
    about = "Graph self-distillation into MLPs: training, evaluation and inference benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset directory and print its statistics.
    Validate(DataArgs),
    /// Train the MLP with graph self-distillation.
    Train(TrainCmd),
    /// Accuracy of a saved checkpoint on each split.
    Eval(EvalCmd),
    /// Inference timing of the MLP against full-graph and single-node GCN.
    Bench(BenchCmd),
    /// Limited-label and label-noise comparison of TGS, vanilla MLP and GCN.
    Robustness(RobustnessCmd),
    /// Test accuracy with each loss component removed.
    Ablation(AblationCmd),
    /// Train the GCN baseline.
    GcnTrain(GcnTrainCmd),
    /// Write the built-in citation-network stand-in as a dataset directory.
    Generate(GenerateCmd),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory. Relative paths that do not exist are looked up
    /// under $TGS_DATA_ROOT.
    #[arg(long)]
    pub data: PathBuf,
}

impl DataArgs {
    pub fn resolve(&self) -> PathBuf {
        resolve_data(&self.data, std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }
}

pub fn resolve_data(path: &Path, root: Option<PathBuf>) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match root {
        Some(root) if root.join(path).exists() => root.join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory for reports, tables and checkpoints.
    #[arg(long, default_value = "tgs-out")]
    pub out: PathBuf,
}

/// Flags that override individual [`TrainConfig`] fields.
#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, value_parser = parse_decay)]
    pub weight_decay_mode: Option<WeightDecay>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_negatives: Option<bool>,
    #[arg(long)]
    pub no_mixup_augment: Option<bool>,
    #[arg(long)]
    pub no_label_sd: Option<bool>,
    #[arg(long)]
    pub negative_dist: Option<NegativeKind>,
    #[arg(long)]
    pub negatives_per_edge: Option<usize>,
    #[arg(long)]
    pub filter_negative_collisions: Option<bool>,
    #[arg(long)]
    pub normalize_positive_term: Option<bool>,
    #[arg(long)]
    pub probe_every: Option<usize>,
}

fn parse_decay(s: &str) -> Result<WeightDecay, String> {
    match s {
        "coupled" => Ok(WeightDecay::Coupled),
        "decoupled" => Ok(WeightDecay::Decoupled),
        other => Err(format!("unknown weight decay mode {other:?} (coupled, decoupled)")),
    }
}

fn parse_degree_model(s: &str) -> Result<DegreeModel, String> {
    match s {
        "regular-ish" => Ok(DegreeModel::RegularIsh),
        "power-law" => Ok(DegreeModel::PowerLaw),
        other => Err(format!("unknown degree model {other:?} (regular-ish, power-law)")),
    }
}

macro_rules! apply {
    ($src:expr, $dst:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        apply!(
            self,
            cfg,
            lr,
            weight_decay,
            weight_decay_mode,
            epochs,
            layers,
            hidden,
            batch_size,
            alpha,
            dropout,
            seed,
            no_negatives,
            no_mixup_augment,
            no_label_sd,
            negative_dist,
            negatives_per_edge,
            filter_negative_collisions,
            normalize_positive_term,
            probe_every
        );
    }
}

#[derive(Debug, Default, Args)]
pub struct GcnOverrides {
    #[arg(long = "gcn-lr", id = "gcn_lr")]
    pub lr: Option<f64>,
    #[arg(long = "gcn-weight-decay", id = "gcn_weight_decay")]
    pub weight_decay: Option<f64>,
    #[arg(long = "gcn-epochs", id = "gcn_epochs")]
    pub epochs: Option<usize>,
    #[arg(long = "gcn-hidden", id = "gcn_hidden")]
    pub hidden: Option<usize>,
    #[arg(long = "gcn-layers", id = "gcn_layers")]
    pub layers: Option<usize>,
}

impl GcnOverrides {
    pub fn apply(&self, cfg: &mut GcnConfig) {
        apply!(self, cfg, lr, weight_decay, epochs, hidden, layers);
    }
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML file with configuration keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub out: OutArgs,
    /// Seeded runs (seed, seed+1, ...); more than one adds a summary file.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train` or `gcn-train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub out: OutArgs,
    /// Time a dataset instead of a generated graph.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Time randomly initialized models at every configured depth.
    #[arg(long, conflicts_with_all = ["checkpoint", "gcn_checkpoint"])]
    pub random_params: bool,
    /// Trained MLP checkpoint (requires --gcn-checkpoint and --data).
    #[arg(long, requires_all = ["gcn_checkpoint", "data"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub gcn_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Comma-separated layer counts.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long)]
    pub node_sample: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub avg_degree: Option<f64>,
    #[arg(long, value_parser = parse_degree_model)]
    pub degree_model: Option<DegreeModel>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl BenchCmd {
    pub fn apply(&self, cfg: &mut BenchConfig) {
        apply!(self, cfg, repetitions, warmup, depths, node_sample, hidden, seed);
        let spec = &mut cfg.graph;
        apply!(self, spec, nodes, avg_degree, features);
        if let Some(m) = self.degree_model {
            spec.model = m;
        }
    }
}

#[derive(Debug, Args)]
pub struct RobustnessCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub out: OutArgs,
    /// Comma-separated labels-per-class settings.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<usize>>,
    /// Comma-separated label-noise ratios.
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub gcn: GcnOverrides,
}

#[derive(Debug, Args)]
pub struct AblationCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct GcnTrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl GcnTrainCmd {
    pub fn apply(&self, cfg: &mut GcnConfig) {
        apply!(self, cfg, lr, weight_decay, epochs, hidden, layers, seed);
    }
}

#[derive(Debug, Args)]
pub struct GenerateCmd {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_only_given_fields() {
        let cli =
            Cli::try_parse_from(["tgs", "train", "--data", "d", "--alpha", "0", "--no-label-sd", "true"]).unwrap();
        let Command::Train(t) = cli.command else { panic!("train expected") };
        let mut cfg = TrainConfig::default();
        t.overrides.apply(&mut cfg);
        assert_eq!(cfg.alpha, 0.0);
        assert!(cfg.no_label_sd);
        assert_eq!(cfg.lr, TrainConfig::default().lr);
    }

    #[test]
    fn every_subcommand_builds() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn depth_list_parses() {
        let cli = Cli::try_parse_from(["tgs", "bench", "--random-params", "--depths", "2,3"]).unwrap();
        let Command::Bench(b) = cli.command else { panic!("bench expected") };
        let mut cfg = BenchConfig::default();
        b.apply(&mut cfg);
        assert_eq!(cfg.depths, vec![2, 3]);
    }

    #[test]
    fn relative_data_falls_back_to_root() {
        let root = std::env::temp_dir();
        let name = Path::new("tgs-cli-missing-dataset-name");
        assert_eq!(resolve_data(name, Some(root.clone())), name.to_path_buf());
        let tmp = tempfile::tempdir_in(&root).unwrap();
        let rel = tmp.path().file_name().unwrap();
        assert_eq!(resolve_data(Path::new(rel), Some(root.clone())), root.join(rel));
    }
}
