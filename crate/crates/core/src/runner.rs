//! Declarative experiment grid: config parsing, per-cell pipeline and report
//! files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_baseline, BaselineKind, BaselineOptions};
use crate::edge_stream::{chronological_split, ingest_reader, mask_new_nodes, InputFormat, SplitRequest, SplitSpec, TemporalGraph};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_seeds, evaluate_regimes, BucketSpec, EdgePredictor, EvalReport, Task};
use crate::normalization::{NormMethod, NormalizerState};
use crate::sampling::{build_eval_samples, build_training_samples, EvalRegime, NodeScope, SampleSet, SamplingOptions, TrainingStrategy};
use crate::static_collapse::{StaticLinearPredictor, StaticRegressorConfig};
use crate::temporal_model::{train, TemporalPredictor, TrainConfig, TrainingTrace};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "EDGEREG_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mean,
    Most,
    Persistence,
    HistoricalAverage,
    StaticLinear,
    TemporalMemory,
}

impl ModelKind {
    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelKind::Mean => Some(BaselineKind::Mean),
            ModelKind::Most => Some(BaselineKind::Most),
            ModelKind::Persistence => Some(BaselineKind::Persistence),
            ModelKind::HistoricalAverage => Some(BaselineKind::HistoricalAverage),
            ModelKind::StaticLinear | ModelKind::TemporalMemory => None,
        }
    }

    /// Only the trained model consumes a training sample set.
    pub fn uses_strategy(self) -> bool {
        self == ModelKind::TemporalMemory
    }

    pub fn supports(self, task: Task) -> bool {
        match self {
            ModelKind::Mean | ModelKind::HistoricalAverage => task == Task::Regression,
            ModelKind::Most => task == Task::Classification,
            _ => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Most => "most",
            ModelKind::Persistence => "persistence",
            ModelKind::HistoricalAverage => "historical_average",
            ModelKind::StaticLinear => "static_linear",
            ModelKind::TemporalMemory => "temporal_memory",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ModelKind::Mean),
            "most" => Ok(ModelKind::Most),
            "persistence" => Ok(ModelKind::Persistence),
            "historical_average" | "ha" => Ok(ModelKind::HistoricalAverage),
            "static_linear" | "static" => Ok(ModelKind::StaticLinear),
            "temporal_memory" | "temporal" => Ok(ModelKind::TemporalMemory),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Optimizer and model settings for the temporal model; seeds and strategy
/// come from the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dim: usize,
    pub decay: f64,
    pub init_scale: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
            dim: d.dim,
            decay: d.decay,
            init_scale: d.init_scale,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, strategy: TrainingStrategy, seeds: &[u64]) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seeds: seeds.to_vec(),
            strategy,
            dim: self.dim,
            decay: self.decay,
            init_scale: self.init_scale,
        }
    }
}

/// Whole-grid configuration. List-valued fields expand into a cartesian grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub format: InputFormat,
    pub norms: Vec<NormMethod>,
    /// Target interval of min-max scaling.
    pub minmax_range: [f64; 2],
    pub strategies: Vec<TrainingStrategy>,
    pub neg_ratio: f64,
    pub with_replacement: bool,
    pub tasks: Vec<Task>,
    pub models: Vec<ModelKind>,
    pub scopes: Vec<NodeScope>,
    pub regimes: Vec<EvalRegime>,
    /// Train, validation and test timestamp counts.
    pub split: [usize; 3],
    pub new_node_fraction: f64,
    pub mask_seed: u64,
    pub eval_seed: u64,
    pub seeds: Vec<u64>,
    /// Decade bucket count; derived from the largest training weight if unset.
    pub buckets: Option<u32>,
    pub baseline: BaselineOptions,
    pub static_regressor: StaticRegressorConfig,
    pub training: TrainSettings,
    pub output_dir: PathBuf,
    /// Worker threads; all logical CPUs if unset.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            format: InputFormat::Generic,
            norms: vec![NormMethod::Log],
            minmax_range: [0.0, 1.0],
            strategies: vec![TrainingStrategy::PositiveOnly],
            neg_ratio: 1.0,
            with_replacement: false,
            tasks: vec![Task::Regression],
            models: vec![ModelKind::Persistence],
            scopes: vec![NodeScope::Old],
            regimes: vec![EvalRegime::Positive, EvalRegime::Overall],
            split: [22, 6, 4],
            new_node_fraction: 0.1,
            mask_seed: 2020,
            eval_seed: 0,
            seeds: vec![0, 1, 2],
            buckets: None,
            baseline: BaselineOptions::default(),
            static_regressor: StaticRegressorConfig::default(),
            training: TrainSettings::default(),
            output_dir: PathBuf::from("results"),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("norms", self.norms.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("tasks", self.tasks.is_empty()),
            ("models", self.models.is_empty()),
            ("scopes", self.scopes.is_empty()),
            ("regimes", self.regimes.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!("'{name}' must not be empty")));
        }
        let [a, b] = self.minmax_range;
        if !(a < b) {
            return Err(Error::Config(format!("minmax_range needs a < b, got [{a}, {b}]")));
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::Config(format!("neg_ratio {} is invalid", self.neg_ratio)));
        }
        if !(0.0..=1.0).contains(&self.new_node_fraction) {
            return Err(Error::Config(format!("new_node_fraction {} outside [0, 1]", self.new_node_fraction)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.training.to_train_config(TrainingStrategy::PositiveOnly, &self.seeds).validate()
    }

    /// Output directory after applying the environment override.
    pub fn effective_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    /// Expands the grid. Model/task pairs a model cannot serve are skipped and
    /// strategy only multiplies models that train.
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut out = Vec::new();
        for &model in &self.models {
            let strategies: Vec<Option<TrainingStrategy>> = if model.uses_strategy() {
                self.strategies.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for strategy in strategies {
                for &task in &self.tasks {
                    if !model.supports(task) {
                        log::info!("skipping {model} for {task:?}");
                        continue;
                    }
                    for &scope in &self.scopes {
                        for &norm in &self.norms {
                            out.push(self.cell(model, strategy, task, scope, norm));
                        }
                    }
                }
            }
        }
        out
    }

    /// Resolves one cell without checking that the model serves the task.
    pub fn cell(
        &self,
        model: ModelKind,
        strategy: Option<TrainingStrategy>,
        task: Task,
        scope: NodeScope,
        norm: NormMethod,
    ) -> CellConfig {
        CellConfig {
            format: self.format,
            norm,
            minmax_range: self.minmax_range,
            strategy,
            neg_ratio: self.neg_ratio,
            with_replacement: self.with_replacement,
            task,
            model,
            scope,
            regimes: self.regimes.clone(),
            split: self.split,
            new_node_fraction: self.new_node_fraction,
            mask_seed: self.mask_seed,
            eval_seed: self.eval_seed,
            seeds: self.seeds.clone(),
            buckets: self.buckets,
            baseline: self.baseline,
            static_regressor: (model == ModelKind::StaticLinear).then_some(self.static_regressor),
            training: model.uses_strategy().then(|| self.training.clone()),
        }
    }
}

/// Fully resolved settings of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub format: InputFormat,
    pub norm: NormMethod,
    pub minmax_range: [f64; 2],
    pub strategy: Option<TrainingStrategy>,
    pub neg_ratio: f64,
    pub with_replacement: bool,
    pub task: Task,
    pub model: ModelKind,
    pub scope: NodeScope,
    pub regimes: Vec<EvalRegime>,
    pub split: [usize; 3],
    pub new_node_fraction: f64,
    pub mask_seed: u64,
    pub eval_seed: u64,
    pub seeds: Vec<u64>,
    pub buckets: Option<u32>,
    pub baseline: BaselineOptions,
    pub static_regressor: Option<StaticRegressorConfig>,
    pub training: Option<TrainSettings>,
}

impl CellConfig {
    /// A single cell with default settings.
    pub fn single(model: ModelKind, norm: NormMethod, task: Task, scope: NodeScope) -> Self {
        let strategy = model.uses_strategy().then_some(TrainingStrategy::PositiveOnly);
        RunConfig::default().cell(model, strategy, task, scope, norm)
    }

    /// Short hex digest of the cell config and dataset content.
    pub fn fingerprint(&self, dataset_sha256: &str) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("cell config serializes"));
        h.update(b"\0");
        h.update(dataset_sha256.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn strategy_label(&self) -> String {
        self.strategy.map_or_else(|| "-".to_string(), |s| s.to_string())
    }
}

/// Ingested input shared read-only by every cell.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub path: PathBuf,
    pub sha256: String,
    pub graph: TemporalGraph,
}

impl Dataset {
    pub fn load(path: &Path, format: InputFormat) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let graph = ingest_reader(bytes.as_slice(), format)?;
        Ok(Dataset {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            graph,
        })
    }

    /// Wraps an in-memory graph; the hash covers its canonical CSV form.
    pub fn from_graph(graph: TemporalGraph, label: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        graph.write_csv(&mut bytes)?;
        Ok(Dataset {
            path: PathBuf::from(label),
            sha256: hex::encode(Sha256::digest(&bytes)),
            graph,
        })
    }
}

/// Split, masked graph, fitted normalizer and class buckets for one cell.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub graph: TemporalGraph,
    pub split: SplitSpec,
    pub normalizer: NormalizerState,
    pub buckets: BucketSpec,
}

pub fn prepare(dataset: &Dataset, cell: &CellConfig) -> Result<Prepared> {
    let [train, val, test] = cell.split;
    let split = chronological_split(&dataset.graph, SplitRequest::Counts { train, val, test })?;
    let (graph, split) = mask_new_nodes(&dataset.graph, &split, cell.new_node_fraction, cell.mask_seed)?;
    let [a, b] = cell.minmax_range;
    let normalizer = NormalizerState::fit(&graph, &split, cell.norm, a, b)?;
    let buckets = match cell.buckets {
        Some(n) => BucketSpec::new(n, true)?,
        None => {
            let max = graph
                .events_in(split.train())
                .iter()
                .map(|e| e.weight)
                .fold(0.0, f64::max);
            BucketSpec::covering(max, true)
        }
    };
    Ok(Prepared {
        graph,
        split,
        normalizer,
        buckets,
    })
}

pub fn eval_sets(prepared: &Prepared, cell: &CellConfig) -> Result<Vec<(EvalRegime, SampleSet)>> {
    let opts = SamplingOptions {
        with_replacement: cell.with_replacement,
    };
    cell.regimes
        .iter()
        .map(|&regime| {
            build_eval_samples(
                &prepared.graph,
                &prepared.split,
                regime,
                cell.scope,
                cell.eval_seed,
                &prepared.normalizer,
                opts,
            )
            .map(|set| (regime, set))
        })
        .collect()
}

fn regime_name(regime: EvalRegime) -> &'static str {
    match regime {
        EvalRegime::Positive => "positive",
        EvalRegime::Overall => "overall",
    }
}

/// A fitted predictor plus, for the trained model, its training-set size and trace.
pub type FittedPredictor = (Box<dyn EdgePredictor + Send + Sync>, Option<(usize, TrainingTrace)>);

/// Fits the cell's predictor for one seed. Training traces are returned for
/// the trained model only.
pub fn fit_predictor(
    prepared: &Prepared,
    cell: &CellConfig,
    seed: u64,
) -> Result<FittedPredictor> {
    if let Some(kind) = cell.model.baseline() {
        let state = fit_baseline(
            kind,
            &prepared.graph,
            &prepared.split,
            &prepared.normalizer,
            &prepared.buckets,
            cell.baseline,
        )?;
        return Ok((Box::new(state), None));
    }
    match cell.model {
        ModelKind::StaticLinear => {
            let config = cell.static_regressor.unwrap_or_default();
            let p = StaticLinearPredictor::fit(&prepared.graph, &prepared.split, &prepared.normalizer, &config)?;
            Ok((Box::new(p), None))
        }
        ModelKind::TemporalMemory => {
            let strategy = cell.strategy.unwrap_or(TrainingStrategy::PositiveOnly);
            let settings = cell.training.clone().unwrap_or_default();
            let config = settings.to_train_config(strategy, &cell.seeds);
            let samples = build_training_samples(
                &prepared.graph,
                &prepared.split,
                strategy,
                cell.neg_ratio,
                seed,
                &prepared.normalizer,
                SamplingOptions {
                    with_replacement: cell.with_replacement,
                },
            )?;
            let (model, trace) = train(&prepared.graph, &prepared.split, &samples, &prepared.normalizer, &config, seed)?;
            let predictor = TemporalPredictor::new(model.params, &prepared.graph, &prepared.split, &prepared.normalizer);
            Ok((Box::new(predictor), Some((samples.len(), trace))))
        }
        _ => unreachable!("baselines handled above"),
    }
}

/// Runs one cell end to end and returns its aggregated report.
pub fn run_cell(dataset: &Dataset, cell: &CellConfig) -> Result<EvalReport> {
    if cell.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let prepared = prepare(dataset, cell)?;
    let sets = eval_sets(&prepared, cell)?;
    let refs: Vec<(EvalRegime, &SampleSet)> = sets.iter().map(|(r, s)| (*r, s)).collect();
    let deterministic = cell.model != ModelKind::TemporalMemory;

    let mut per_seed: Vec<BTreeMap<String, f64>> = Vec::with_capacity(cell.seeds.len());
    let mut train_count = None;
    for (i, &seed) in cell.seeds.iter().enumerate() {
        if deterministic && i > 0 {
            // seed-independent model: identical scores for every seed
            per_seed.push(per_seed[0].clone());
            continue;
        }
        let (predictor, trace) = fit_predictor(&prepared, cell, seed)?;
        if let Some((n, _)) = trace {
            train_count.get_or_insert(n);
        }
        per_seed.push(evaluate_regimes(predictor.as_ref(), &refs, cell.task, &prepared.buckets)?);
    }

    let mut report = aggregate_seeds(&per_seed)?;
    report.dataset_sha256 = Some(dataset.sha256.clone());
    report.config_fingerprint = cell.fingerprint(&dataset.sha256);
    let mut config = serde_json::to_value(cell)?;
    config["dataset"] = serde_json::Value::String(dataset.path.display().to_string());
    report.config = Some(config);
    for (regime, set) in &sets {
        report.sample_counts.insert(format!("{}_eval", regime_name(*regime)), set.len());
    }
    if let Some(n) = train_count {
        report.sample_counts.insert("train".into(), n);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: CellConfig,
    pub fingerprint: String,
    pub result: std::result::Result<EvalReport, String>,
}

#[derive(Clone, Debug)]
pub struct MatrixOutcome {
    pub cells: Vec<CellOutcome>,
}

impl MatrixOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    /// 0 when every cell succeeded, 2 on partial failure, 1 when all failed.
    pub fn exit_code(&self) -> i32 {
        match self.failures() {
            0 => 0,
            f if f == self.cells.len() => 1,
            _ => 2,
        }
    }
}

/// Runs every cell on a worker pool and collects outcomes in grid order.
/// Cell failures are captured, never propagated.
pub fn run_cells(dataset: &Dataset, cells: &[CellConfig], threads: Option<usize>) -> Result<MatrixOutcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let cells = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let fingerprint = cell.fingerprint(&dataset.sha256);
                let result = run_cell(dataset, cell).map_err(|e| {
                    log::error!("cell {fingerprint} ({} / {}) failed: {e}", cell.model, cell.norm);
                    format!("cell {fingerprint}: {e}")
                });
                CellOutcome {
                    cell: cell.clone(),
                    fingerprint,
                    result,
                }
            })
            .collect()
    });
    Ok(MatrixOutcome { cells })
}

/// Loads the dataset, runs the grid and writes all report files into `out`.
pub fn run_matrix(config: &RunConfig, out: &Path) -> Result<MatrixOutcome> {
    config.validate()?;
    let dataset = Dataset::load(&config.dataset, config.format)?;
    let outcome = run_cells(&dataset, &config.cells(), config.threads)?;
    write_reports(&outcome, &dataset, config, out)?;
    Ok(outcome)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Layout: `reports/<fingerprint>.json` per cell (errors as
/// `<fingerprint>.error.json`), `metrics.csv` and `table.csv`.
pub fn write_reports(outcome: &MatrixOutcome, dataset: &Dataset, config: &RunConfig, out: &Path) -> Result<()> {
    let reports_dir = out.join("reports");
    std::fs::create_dir_all(&reports_dir).map_err(|e| Error::io(&reports_dir, e))?;
    let mut flat = Vec::new();
    let mut first = true;
    for cell in &outcome.cells {
        match &cell.result {
            Ok(report) => {
                write_file(&reports_dir.join(format!("{}.json", cell.fingerprint)), report.to_canonical_json()?.as_bytes())?;
                report.write_csv(&mut flat, first)?;
                first = false;
            }
            Err(message) => {
                let mut config_json = serde_json::to_value(&cell.cell)?;
                config_json["dataset"] = serde_json::Value::String(dataset.path.display().to_string());
                let body = serde_json::json!({
                    "config_fingerprint": cell.fingerprint,
                    "config": config_json,
                    "dataset_sha256": dataset.sha256,
                    "error": message,
                });
                let mut text = serde_json::to_string_pretty(&body)?;
                text.push('\n');
                write_file(&reports_dir.join(format!("{}.error.json", cell.fingerprint)), text.as_bytes())?;
            }
        }
    }
    write_file(&out.join("metrics.csv"), &flat)?;
    write_file(&out.join("table.csv"), &summary_table(outcome, &config.norms)?)?;
    Ok(())
}

/// Rows are model × strategy (plus task and scope); columns are
/// normalization × metric, each with a mean and a std column.
pub fn summary_table(outcome: &MatrixOutcome, norms: &[NormMethod]) -> Result<Vec<u8>> {
    type RowKey = (ModelKind, String, String, String);
    let mut rows: Vec<RowKey> = Vec::new();
    let mut values: BTreeMap<(RowKey, String), String> = BTreeMap::new();
    let mut metric_names: BTreeSet<String> = BTreeSet::new();
    for c in &outcome.cells {
        let key: RowKey = (
            c.cell.model,
            c.cell.strategy_label(),
            format!("{:?}", c.cell.task).to_lowercase(),
            format!("{:?}", c.cell.scope).to_lowercase(),
        );
        if !rows.contains(&key) {
            rows.push(key.clone());
        }
        match &c.result {
            Ok(report) => {
                for (name, m) in &report.metrics {
                    metric_names.insert(name.clone());
                    values.insert((key.clone(), format!("{}/{name}", c.cell.norm)), format!("{:.6}", m.mean));
                    values.insert((key.clone(), format!("{}/{name}_std", c.cell.norm)), format!("{:.6}", m.std));
                }
            }
            Err(_) => {
                values.insert((key.clone(), format!("{}/error", c.cell.norm)), "failed".into());
            }
        }
    }
    let mut columns = Vec::new();
    for norm in norms {
        for name in &metric_names {
            columns.push(format!("{norm}/{name}"));
            columns.push(format!("{norm}/{name}_std"));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "strategy".into(), "task".into(), "scope".into()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for key in &rows {
        let mut record = vec![key.0.to_string(), key.1.clone(), key.2.clone(), key.3.clone()];
        for col in &columns {
            let failed = col
                .split_once('/')
                .is_some_and(|(norm, _)| values.contains_key(&(key.clone(), format!("{norm}/error"))));
            record.push(match values.get(&(key.clone(), col.clone())) {
                Some(v) => v.clone(),
                None if failed => "failed".into(),
                None => String::new(),
            });
        }
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| Error::io("<table>", e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, SyntheticKind};

    fn dataset(kind: SyntheticKind) -> Dataset {
        Dataset::from_graph(generate_synthetic(kind, 6, 10, 0.4, 3).unwrap(), "synthetic").unwrap()
    }

    fn small(models: Vec<ModelKind>) -> RunConfig {
        RunConfig {
            models,
            split: [6, 2, 2],
            new_node_fraction: 0.0,
            seeds: vec![0, 1],
            threads: Some(2),
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = RunConfig::from_toml_str(
            "dataset = \"x.csv\"\nmodels = [\"mean\", \"temporal_memory\"]\nnorms = [\"log\", \"minmax\"]\n[training]\nmax_epochs = 3\n",
        )
        .unwrap();
        assert_eq!(c.models, vec![ModelKind::Mean, ModelKind::TemporalMemory]);
        assert_eq!(c.training.max_epochs, 3);
        assert_eq!(c.split, [22, 6, 4]);
        let back = RunConfig::from_toml_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_toml_str("seeds = []").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn grid_expansion() {
        let c = RunConfig {
            models: vec![ModelKind::Mean, ModelKind::Most, ModelKind::TemporalMemory],
            strategies: vec![TrainingStrategy::PositiveOnly, TrainingStrategy::AllPairs],
            tasks: vec![Task::Regression, Task::Classification],
            norms: vec![NormMethod::Log, NormMethod::Minmax],
            ..RunConfig::default()
        };
        // mean: 1 task, most: 1 task, temporal: 2 strategies × 2 tasks; × 2 norms
        assert_eq!(c.cells().len(), (1 + 1 + 4) * 2);
    }

    #[test]
    fn constant_stream_persistence_is_exact() {
        let d = dataset(SyntheticKind::Constant);
        let cell = CellConfig {
            split: [6, 2, 2],
            new_node_fraction: 0.0,
            ..CellConfig::single(ModelKind::Persistence, NormMethod::Log, Task::Regression, NodeScope::Old)
        };
        let report = run_cell(&d, &cell).unwrap();
        assert_eq!(report.metrics["positive_mse"].mean, 0.0);
        assert_eq!(report.metrics["overall_mse"].mean, 0.0);
        assert_eq!(report.sample_counts["overall_eval"], 2 * report.sample_counts["positive_eval"]);
    }

    #[test]
    fn failures_are_isolated() {
        let d = dataset(SyntheticKind::RandomWalk);
        // static model needs twice the test length in training snapshots
        let cells = small(vec![ModelKind::Persistence, ModelKind::StaticLinear])
            .cells()
            .into_iter()
            .map(|mut c| {
                if c.model == ModelKind::StaticLinear {
                    c.split = [3, 3, 4];
                }
                c
            })
            .collect::<Vec<_>>();
        let outcome = run_cells(&d, &cells, Some(2)).unwrap();
        assert_eq!(outcome.cells.len(), 2);
        assert_eq!(outcome.exit_code(), 2);
        assert!(outcome.cells[1].result.as_ref().unwrap_err().contains(&outcome.cells[1].fingerprint));
    }

    #[test]
    fn reports_are_reproducible() {
        let d = dataset(SyntheticKind::RandomWalk);
        let mut c = small(vec![ModelKind::Persistence, ModelKind::HistoricalAverage, ModelKind::TemporalMemory]);
        c.training.max_epochs = 2;
        let a = run_cells(&d, &c.cells(), Some(3)).unwrap();
        let b = run_cells(&d, &c.cells(), Some(1)).unwrap();
        assert_eq!(a.exit_code(), 0);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            let (x, y) = (x.result.as_ref().unwrap(), y.result.as_ref().unwrap());
            assert_eq!(x.to_canonical_json().unwrap(), y.to_canonical_json().unwrap());
        }
        assert_eq!(summary_table(&a, &c.norms).unwrap(), summary_table(&b, &c.norms).unwrap());
        let table = String::from_utf8(summary_table(&a, &c.norms).unwrap()).unwrap();
        assert!(table.starts_with("model,strategy,task,scope,log/overall_mse,log/overall_mse_std"));
        assert_eq!(table.lines().count(), 4);
    }
}
