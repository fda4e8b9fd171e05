mod args;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;

use args::{AblationCmd, BenchCmd, Cli, Command, DataArgs, EvalCmd, GcnTrainCmd, GenerateCmd, RobustnessCmd, TrainCmd};
use tgs_core::bench::{self, BenchConfig};
use tgs_core::checkpoint::Checkpoint;
use tgs_core::dataset::{load_dataset, save_dataset, FeatureEncoding};
use tgs_core::eval::{ablation_csv, ablation_matrix, robustness_csv, robustness_suite, RobustnessConfig};
use tgs_core::gcn::{gcn_full_forward, gcn_train, GcnConfig, GcnNorm, GcnParams};
use tgs_core::graph::GraphStore;
use tgs_core::sparse::SparseMatrix;
use tgs_core::synthetic::{cora_like, gen_synthetic};
use tgs_core::trainer::{evaluate, stream, train_with_recovery, RepeatedReport, SplitAccuracy, TrainConfig};
use tgs_core::{TgsError, TgsParams};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
enum CliError {
    Config(String),
    Dataset(String),
    Divergence(String),
    Checkpoint(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Runtime(_) => 1,
            CliError::Dataset(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Dataset(m) => write!(f, "dataset error: {m}"),
            CliError::Divergence(m) => write!(f, "training diverged: {m}"),
            CliError::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<TgsError> for CliError {
    fn from(e: TgsError) -> Self {
        match e {
            TgsError::Dataset(_)
            | TgsError::EmptyMask(_)
            | TgsError::EmptyEdgeSet
            | TgsError::InsufficientClass { .. } => CliError::Dataset(e.to_string()),
            TgsError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TgsError::InvalidArgument(_) => CliError::Config(e.to_string()),
            TgsError::Checkpoint(_) => CliError::Checkpoint(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Validate(a) => validate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Robustness(a) => cmd_robustness(&a),
        Command::Ablation(a) => cmd_ablation(&a),
        Command::GcnTrain(a) => cmd_gcn_train(&a),
        Command::Generate(a) => cmd_generate(&a),
    }
}

fn load(data: &DataArgs) -> CliResult<GraphStore> {
    let dir = data.resolve();
    if !dir.is_dir() {
        return Err(CliError::Dataset(format!("{} is not a dataset directory", dir.display())));
    }
    load_dataset(&dir).map_err(|e| CliError::Dataset(format!("{}: {e}", dir.display())))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Prints the fully materialized configuration so the run can be repeated.
fn echo_config<T: Serialize>(cfg: &T) -> CliResult<()> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("# effective config\n{text}# end config");
    Ok(())
}

fn write(path: PathBuf, contents: &str) -> CliResult<PathBuf> {
    fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable report")
}

fn validate(a: &DataArgs) -> CliResult<()> {
    let g = load(a)?;
    let m = g.masks();
    println!("nodes      {}", g.n_nodes());
    println!("edges      {}", g.n_edges());
    println!("features   {}", g.n_features());
    println!("classes    {}", g.n_classes());
    println!("train/val/test {}/{}/{}", m.train_ids().len(), m.val_ids().len(), m.test_ids().len());
    println!("homophily  {:.4}", g.edge_homophily());
    let isolated = (0..g.n_nodes()).filter(|&v| g.degree(v) == 0).count();
    println!("isolated   {isolated}");
    Ok(())
}

fn cmd_train(a: &TrainCmd) -> CliResult<()> {
    let mut cfg: TrainConfig = read_config(a.config.config.as_deref())?;
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    if a.runs == 0 {
        return Err(CliError::Config("--runs must be at least 1".into()));
    }
    echo_config(&cfg)?;
    let g = load(&a.data)?;
    out_dir(&a.out.out)?;
    let mut reports = Vec::with_capacity(a.runs);
    let mut seeds = Vec::with_capacity(a.runs);
    for k in 0..a.runs as u64 {
        let seed = cfg.seed.wrapping_add(k);
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let suffix = if a.runs == 1 { String::new() } else { format!("-seed{seed}") };
        let recovery = a.out.out.join(format!("last-good{suffix}.ckpt"));
        let outcome = train_with_recovery(&g, &run_cfg, Some(recovery))?;
        let r = &outcome.report;
        println!(
            "seed {seed}: best epoch {} val {:.4} test {} ({:.1}s)",
            r.best_epoch,
            r.val_accuracy,
            r.test_accuracy.map_or("n/a".into(), |t| format!("{t:.4}")),
            outcome.seconds
        );
        write(a.out.out.join(format!("report{suffix}.json")), &r.to_json())?;
        write(a.out.out.join(format!("curve{suffix}.csv")), &r.curve_csv())?;
        if !r.probes.is_empty() {
            write(a.out.out.join(format!("probes{suffix}.csv")), &r.probe_csv())?;
        }
        let ckpt = a.out.out.join(format!("model{suffix}.ckpt"));
        outcome.params.to_checkpoint().save(&ckpt)?;
        println!("wrote {}", ckpt.display());
        seeds.push(seed);
        reports.push(outcome.report);
    }
    if a.runs > 1 {
        let summary = RepeatedReport::from_runs(seeds, reports);
        println!("test accuracy {:.4} ± {:.4} over {} runs", summary.mean_test, summary.std_test, a.runs);
        write(a.out.out.join("summary.json"), &json(&summary))?;
    }
    Ok(())
}

enum LoadedModel {
    Tgs(TgsParams),
    Gcn(GcnParams),
}

fn load_checkpoint(path: &Path) -> CliResult<LoadedModel> {
    if !path.is_file() {
        return Err(CliError::Checkpoint(format!("{} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    let loaded = match ck.kind.as_str() {
        "tgs" => TgsParams::from_checkpoint(&ck).map(LoadedModel::Tgs),
        "gcn" => GcnParams::from_checkpoint(&ck).map(LoadedModel::Gcn),
        other => return Err(CliError::Checkpoint(format!("{}: unknown model kind {other:?}", path.display()))),
    };
    loaded.map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
}

fn gcn_split_accuracy(params: &GcnParams, g: &GraphStore) -> CliResult<SplitAccuracy> {
    let logits = gcn_full_forward(params, g, &GcnNorm::new(g.adjacency()), &SparseMatrix::from_dense(g.features()))?;
    let preds = logits.argmax_rows();
    let m = g.masks();
    let acc = |mask: &[bool]| tgs_core::eval::accuracy(&preds, g.labels(), mask).ok();
    Ok(SplitAccuracy { train: acc(&m.train), val: acc(&m.val), test: acc(&m.test) })
}

fn cmd_eval(a: &EvalCmd) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let g = load(&a.data)?;
    let acc = match &model {
        LoadedModel::Tgs(p) => {
            if p.dims().input != g.n_features() || p.dims().classes != g.n_classes() {
                return Err(CliError::Checkpoint("checkpoint dimensions do not match the dataset".into()));
            }
            evaluate(p, &g)?
        }
        LoadedModel::Gcn(p) => gcn_split_accuracy(p, &g)?,
    };
    println!("{}", json(&acc));
    Ok(())
}

fn cmd_bench(a: &BenchCmd) -> CliResult<()> {
    let mut cfg: BenchConfig = read_config(a.config.config.as_deref())?;
    a.apply(&mut cfg);
    cfg.validate()?;
    if !a.random_params && a.checkpoint.is_none() {
        return Err(CliError::Config("bench needs --random-params or --checkpoint with --gcn-checkpoint".into()));
    }
    echo_config(&cfg)?;
    let g = match &a.data {
        Some(d) => load(&DataArgs { data: d.clone() })?,
        None => gen_synthetic(&cfg.graph, &mut stream(cfg.seed, 4))?,
    };
    let queries = bench::sample_queries(&g, &cfg);
    let mut records = match (&a.checkpoint, &a.gcn_checkpoint) {
        (Some(t), Some(c)) => {
            let LoadedModel::Tgs(tgs) = load_checkpoint(t)? else {
                return Err(CliError::Checkpoint(format!("{} is not an MLP checkpoint", t.display())));
            };
            let LoadedModel::Gcn(gcn) = load_checkpoint(c)? else {
                return Err(CliError::Checkpoint(format!("{} is not a GCN checkpoint", c.display())));
            };
            bench::time_models(&g, &queries, &tgs, &gcn, &cfg)?
        }
        _ => bench::depth_sweep(&g, &queries, &cfg)?,
    };
    out_dir(&a.out.out)?;
    print!("{}", bench::render_table(&records));
    write(a.out.out.join("bench.csv"), &bench::to_csv(&records))?;
    if a.random_params {
        records = Vec::new();
        for &d in &cfg.depths {
            records.extend(bench::time_batch_inference(&g, d, &cfg)?);
        }
        println!("whole-graph inference");
        print!("{}", bench::render_table(&records));
        write(a.out.out.join("bench-batch.csv"), &bench::to_csv(&records))?;
    }
    Ok(())
}

fn cmd_robustness(a: &RobustnessCmd) -> CliResult<()> {
    let mut cfg: RobustnessConfig = read_config(a.config.config.as_deref())?;
    a.overrides.apply(&mut cfg.train);
    a.gcn.apply(&mut cfg.gcn);
    cfg.gcn.seed = cfg.train.seed;
    if let Some(l) = &a.labels {
        cfg.label_counts = l.clone();
    }
    if let Some(n) = &a.noise {
        cfg.noise_ratios = n.clone();
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    cfg.train.validate()?;
    cfg.gcn.validate()?;
    echo_config(&cfg)?;
    let g = load(&a.data)?;
    let rows = robustness_suite(&g, &cfg)?;
    out_dir(&a.out.out)?;
    let csv = robustness_csv(&rows);
    print!("{csv}");
    write(a.out.out.join("robustness.csv"), &csv)?;
    Ok(())
}

fn cmd_ablation(a: &AblationCmd) -> CliResult<()> {
    let mut cfg: TrainConfig = read_config(a.config.config.as_deref())?;
    a.overrides.apply(&mut cfg);
    cfg.validate()?;
    echo_config(&cfg)?;
    let g = load(&a.data)?;
    let report = ablation_matrix(&g, &cfg, a.runs)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out_dir(&a.out.out)?;
    let csv = ablation_csv(&report);
    print!("{csv}");
    write(a.out.out.join("ablation.csv"), &csv)?;
    write(a.out.out.join("ablation.json"), &json(&report))?;
    Ok(())
}

fn cmd_gcn_train(a: &GcnTrainCmd) -> CliResult<()> {
    let mut cfg: GcnConfig = read_config(a.config.config.as_deref())?;
    a.apply(&mut cfg);
    cfg.validate()?;
    echo_config(&cfg)?;
    let g = load(&a.data)?;
    let outcome = gcn_train(&g, &cfg)?;
    let r = &outcome.report;
    println!(
        "best epoch {} val {:.4} test {} ({:.1}s)",
        r.best_epoch,
        r.val_accuracy,
        r.test_accuracy.map_or("n/a".into(), |t| format!("{t:.4}")),
        outcome.seconds
    );
    out_dir(&a.out.out)?;
    write(a.out.out.join("gcn-report.json"), &json(r))?;
    let ckpt = a.out.out.join("gcn.ckpt");
    outcome.params.to_checkpoint().save(&ckpt)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_generate(a: &GenerateCmd) -> CliResult<()> {
    let g = cora_like(a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    save_dataset(&a.out, &g, FeatureEncoding::Binary)?;
    println!("wrote {} ({} nodes, {} edges)", a.out.display(), g.n_nodes(), g.n_edges());
    Ok(())
}
