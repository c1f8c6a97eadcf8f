use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use edgereg::edge_stream::{chronological_split, mask_new_nodes, InputFormat, SplitRequest};
use edgereg::histogram::{emit_histogram, HistScale};
use edgereg::metrics::Task;
use edgereg::normalization::NormMethod;
use edgereg::runner::{prepare, run_cells, run_matrix, write_reports, Dataset, ModelKind, RunConfig};
use edgereg::sampling::{EvalRegime, NodeScope, TrainingStrategy};
use edgereg::synthetic::{generate_synthetic, SyntheticKind};
use edgereg::temporal_model::{save_checkpoint, train};
use edgereg::{Error, Result};

#[derive(Parser)]
#[command(name = "edgereg", version, about = "Edge regression benchmark on temporal graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and print its statistics.
    Ingest(Common),
    /// Split chronologically, mask new nodes and print the split.
    Split(Common),
    /// Evaluate a non-trained baseline.
    Baseline(Common),
    /// Train the temporal model and save one checkpoint per seed.
    Train(Common),
    /// Fit and evaluate any model.
    Eval(Common),
    /// Run the configured grid and write reports.
    Matrix(Common),
    /// Generate a synthetic edge stream.
    Synth(SynthArgs),
    /// Write an edge-weight histogram.
    Hist(HistArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    format: Option<InputFormat>,
    #[arg(long)]
    norm: Option<NormMethod>,
    #[arg(long)]
    strategy: Option<TrainingStrategy>,
    #[arg(long)]
    neg_ratio: Option<f64>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Node scope of the evaluation sets: old, new or all.
    #[arg(long)]
    nodes: Option<NodeScope>,
    #[arg(long)]
    regime: Option<EvalRegime>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Train, validation and test timestamp counts, e.g. 22,6,4.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    split: Option<Vec<usize>>,
    #[arg(long)]
    new_fraction: Option<f64>,
    #[arg(long)]
    mask_seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "constant")]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 10)]
    node_count: usize,
    #[arg(long, default_value_t = 10)]
    timestamps: usize,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "generic")]
    format: InputFormat,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value = "log")]
    scale: HistScale,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = v.clone();
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if let Some(v) = self.norm {
            c.norms = vec![v];
        }
        if let Some(v) = self.strategy {
            c.strategies = vec![v];
        }
        if let Some(v) = self.neg_ratio {
            c.neg_ratio = v;
        }
        if let Some(v) = self.task {
            c.tasks = vec![v];
        }
        if let Some(v) = self.model {
            c.models = vec![v];
        }
        if let Some(v) = self.nodes {
            c.scopes = vec![v];
        }
        if let Some(v) = self.regime {
            c.regimes = vec![v];
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = &self.split {
            c.split = <[usize; 3]>::try_from(v.as_slice())
                .map_err(|_| Error::Config(format!("--split needs three counts, got {v:?}")))?;
        }
        if let Some(v) = self.new_fraction {
            c.new_node_fraction = v;
        }
        if let Some(v) = self.mask_seed {
            c.mask_seed = v;
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        if let Some(v) = &self.out {
            c.output_dir = v.clone();
        }
        if c.dataset.as_os_str().is_empty() {
            return Err(Error::Config("no dataset given (--dataset or config)".into()));
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(args: &Common) -> Result<i32> {
    let c = args.resolve()?;
    let d = Dataset::load(&c.dataset, c.format)?;
    print_json(&json!({ "stats": d.graph.stats(), "dataset_sha256": d.sha256 }))?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        d.graph.save(&out.join("graph.csv"), None)?;
    }
    Ok(0)
}

fn split(args: &Common) -> Result<i32> {
    let c = args.resolve()?;
    let d = Dataset::load(&c.dataset, c.format)?;
    let [train, val, test] = c.split;
    let s = chronological_split(&d.graph, SplitRequest::Counts { train, val, test })?;
    let (g, s) = mask_new_nodes(&d.graph, &s, c.new_node_fraction, c.mask_seed)?;
    print_json(&serde_json::to_value(&s)?)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        g.save(&out.join("graph.csv"), Some(&s))?;
    }
    Ok(0)
}

/// Runs every cell of the resolved grid, prints the reports and writes them
/// when an output directory was requested.
fn evaluate(args: &Common, restrict_to_baselines: bool) -> Result<i32> {
    let c = args.resolve()?;
    if restrict_to_baselines {
        if let Some(m) = c.models.iter().find(|m| m.baseline().is_none()) {
            return Err(Error::Config(format!("'{m}' is not a baseline; use eval")));
        }
    }
    let d = Dataset::load(&c.dataset, c.format)?;
    let outcome = run_cells(&d, &c.cells(), c.threads)?;
    for cell in &outcome.cells {
        match &cell.result {
            Ok(report) => print!("{}", report.to_canonical_json()?),
            Err(message) => eprintln!("error: {message}"),
        }
    }
    if args.out.is_some() || args.config.is_some() {
        let out = c.effective_output_dir();
        write_reports(&outcome, &d, &c, &out)?;
    }
    Ok(outcome.exit_code())
}

fn train_cmd(args: &Common) -> Result<i32> {
    let mut c = args.resolve()?;
    c.models = vec![ModelKind::TemporalMemory];
    let d = Dataset::load(&c.dataset, c.format)?;
    let out = c.effective_output_dir();
    create_dir(&out)?;
    let mut summary = Vec::new();
    for cell in c.cells() {
        let prepared = prepare(&d, &cell)?;
        for &seed in &cell.seeds {
            // fit_predictor discards the parameters, so train directly here
            let strategy = cell.strategy.unwrap_or(TrainingStrategy::PositiveOnly);
            let config = c.training.to_train_config(strategy, &cell.seeds);
            let samples = edgereg::sampling::build_training_samples(
                &prepared.graph,
                &prepared.split,
                strategy,
                cell.neg_ratio,
                seed,
                &prepared.normalizer,
                edgereg::sampling::SamplingOptions {
                    with_replacement: cell.with_replacement,
                },
            )?;
            let (model, trace) = train(&prepared.graph, &prepared.split, &samples, &prepared.normalizer, &config, seed)?;
            let fp = cell.fingerprint(&d.sha256);
            let path = out.join(format!("temporal_{fp}_seed{seed}.bin"));
            let metadata = json!({
                "config": cell,
                "dataset_sha256": d.sha256,
                "seed": seed,
                "trace": trace,
                "normalizer": serde_json::from_str::<serde_json::Value>(&prepared.normalizer.to_json()?)?,
            });
            save_checkpoint(&model.params, &path, &metadata)?;
            summary.push(json!({
                "checkpoint": path.display().to_string(),
                "seed": seed,
                "best_epoch": trace.best_epoch,
                "best_val_mse": trace.epochs.get(trace.best_epoch).and_then(|e| e.val_mse),
                "epochs_run": trace.epochs.len(),
            }));
        }
    }
    print_json(&serde_json::Value::Array(summary))?;
    Ok(0)
}

fn matrix(args: &Common) -> Result<i32> {
    let c = args.resolve()?;
    let out = c.effective_output_dir();
    let outcome = run_matrix(&c, &out)?;
    eprintln!(
        "{} cells, {} failed; reports in {}",
        outcome.cells.len(),
        outcome.failures(),
        out.display()
    );
    Ok(outcome.exit_code())
}

fn synth(args: &SynthArgs) -> Result<i32> {
    let g = generate_synthetic(args.kind, args.node_count, args.timestamps, args.density, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    g.save(&args.out, None)?;
    print_json(&serde_json::to_value(g.stats())?)?;
    Ok(0)
}

fn hist(args: &HistArgs) -> Result<i32> {
    let d = Dataset::load(&args.dataset, args.format)?;
    let bins = emit_histogram(&d.graph, args.bins, args.scale, &args.out)?;
    eprintln!("{} bins written to {}", bins.len(), args.out.display());
    Ok(0)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Baseline(a) => evaluate(a, true),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => evaluate(a, false),
        Command::Matrix(a) => matrix(a),
        Command::Synth(a) => synth(a),
        Command::Hist(a) => hist(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
