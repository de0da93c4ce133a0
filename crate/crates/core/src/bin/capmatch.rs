use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use capmatch::aggregate::{Axis, Dimension};
use capmatch::audit::RebalanceMode;
use capmatch::labeling::{ExclusionMode, FieldOrder, StrategyKind};
use capmatch::pipeline::{execute, RunConfig};

/// Caption keyword labeling, label-set evaluation and model aggregation.
#[derive(Parser)]
#[command(name = "capmatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label a caption manifest with a term dictionary.
    Label {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: LabelOpts,
    },
    /// Audit an existing labels file against ground truth.
    Audit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: LabelsInput,
    },
    /// Rebalance a labels file to a fixed number of samples per class.
    Balance {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: LabelsInput,
        #[arg(long)]
        target: Option<u64>,
        /// under or over
        #[arg(long)]
        rebalance: Option<RebalanceMode>,
    },
    /// Score predictions and build robustness reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: EvalOpts,
    },
    /// Bin models by metadata and average their best metric values.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: AggregateOpts,
    },
    /// Consistency checks on published or computed numbers.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opts: CheckOpts,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LabelOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// strict, sc or mc
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    mc_cap: Option<usize>,
    /// per-class, global or none
    #[arg(long)]
    exclude_mode: Option<ExclusionMode>,
    /// Comma-separated caption fields in match order.
    #[arg(long)]
    fields: Option<FieldOrder>,
}

#[derive(Args)]
struct LabelsInput {
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Caption manifest supplying ground truth.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Dictionary supplying the class universe.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    labelset: Option<PathBuf>,
    /// Label set the predictions refer to, when different.
    #[arg(long)]
    pred_labelset: Option<PathBuf>,
    #[arg(long = "eval-set")]
    eval_sets: Vec<PathBuf>,
    /// model=path, or a path named by its file stem.
    #[arg(long = "predictions")]
    predictions: Vec<String>,
    /// eval_set_id=path to the classes a shifted set covers.
    #[arg(long = "shift-universe")]
    shift_universes: Vec<String>,
    /// Class ids to evaluate over.
    #[arg(long)]
    subset: Option<PathBuf>,
    /// Split the label set into K random parts and evaluate each.
    #[arg(long, value_name = "K")]
    partition: Option<usize>,
    /// Keep only the best checkpoint per model.
    #[arg(long)]
    best: bool,
}

#[derive(Args)]
struct AggregateOpts {
    /// CSV or JSONL model metadata.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    dimension: Option<Dimension>,
    /// Interior cut points, comma-separated.
    #[arg(long, value_delimiter = ',')]
    edges: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    bin_labels: Option<Vec<String>>,
    #[arg(long = "metric")]
    metrics: Vec<String>,
    /// metric or bin
    #[arg(long)]
    axis: Option<Axis>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct CheckOpts {
    #[arg(long, value_delimiter = ',')]
    by_label: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    by_shift: Option<Vec<f64>>,
    /// JSON array of rows.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// label_accuracy,coverage,utilization
    #[arg(long, value_delimiter = ',')]
    audit_fractions: Option<Vec<f64>>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn flags(command: Command) -> (Common, RunConfig) {
    let mut c = RunConfig::default();
    let (name, common) = match command {
        Command::Label { common, opts } => {
            c.manifest = opts.manifest;
            c.dictionary = opts.dictionary;
            c.strategy = opts.strategy;
            c.mc_cap = opts.mc_cap;
            c.exclude_mode = opts.exclude_mode;
            c.fields = opts.fields;
            ("label", common)
        }
        Command::Audit { common, opts } => {
            labels_input(&mut c, opts);
            ("audit", common)
        }
        Command::Balance {
            common,
            opts,
            target,
            rebalance,
        } => {
            labels_input(&mut c, opts);
            c.target = target;
            c.rebalance = rebalance;
            ("balance", common)
        }
        Command::Eval { common, opts } => {
            c.labelset = opts.labelset;
            c.pred_labelset = opts.pred_labelset;
            c.eval_sets = opts.eval_sets;
            c.predictions = opts.predictions;
            c.shift_universes = opts.shift_universes;
            c.subset = opts.subset;
            c.partition = opts.partition;
            c.best = opts.best.then_some(true);
            ("eval", common)
        }
        Command::Aggregate { common, opts } => {
            c.metadata = opts.metadata;
            c.dimension = opts.dimension;
            c.edges = opts.edges;
            c.bin_labels = opts.bin_labels;
            c.metrics = opts.metrics;
            c.axis = opts.axis;
            c.k = opts.k;
            ("aggregate", common)
        }
        Command::Check { common, opts } => {
            c.by_label = opts.by_label;
            c.by_shift = opts.by_shift;
            c.grid = opts.grid;
            c.audit_fractions = opts.audit_fractions;
            c.tolerance = opts.tolerance;
            ("check", common)
        }
    };
    c.command = Some(name.to_string());
    c.seed = common.seed;
    c.output = common.out.clone();
    (common, c)
}

fn labels_input(c: &mut RunConfig, opts: LabelsInput) {
    c.labels = opts.labels;
    c.manifest = opts.manifest;
    c.dictionary = opts.dictionary;
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    let (common, from_flags) = flags(cli.command);
    let base = match &common.config {
        Some(path) => RunConfig::from_path(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    let config = base.overlay(from_flags);
    let outcome = execute(config);
    for e in outcome.log.errors.iter().take(20) {
        eprintln!("error: {e}");
    }
    if outcome.log.errors.len() > 20 {
        eprintln!("... {} more errors in run.json", outcome.log.errors.len() - 20);
    }
    Ok(outcome.exit.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
