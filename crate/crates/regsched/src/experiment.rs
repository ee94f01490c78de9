//! Config-driven experiment runner: validates a JSON experiment
//! description, trains models under any schedule mode, fans runs out over
//! seeds and modes, and writes deterministic JSONL/CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::{derive_seed, GaConfig};
use crate::ga_nas::{self, PruneOptions};
use crate::ga_reg::{run_ga_reg, GaRegOptions, GaRegOutcome};
use crate::metrics::RunRecord;
use crate::model::{Activation, LayeredModel, StructureMask};
use crate::regularizers::{LambdaMatrix, RegKind, REGULARIZER_COUNT};
use crate::schedule::{ScheduleMode, ScheduleSpec};
use crate::trainer::{TrainOptions, TrainingLoop};

/// Stream tags separating the independent RNG consumers of one run seed.
const STREAM_MODEL_INIT: u64 = 100;
const STREAM_GA_SEARCH: u64 = 101;
const STREAM_PRUNE: u64 = 102;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Path to a CSV file, or the literal "synthetic".
    pub source: String,
    #[serde(default)]
    pub target_column: Option<String>,
    /// Synthetic generator size (rows).
    #[serde(default)]
    pub objects: Option<usize>,
    /// Synthetic generator feature count.
    #[serde(default)]
    pub features: Option<usize>,
}

impl DatasetSpec {
    pub fn is_synthetic(&self) -> bool {
        self.source == "synthetic"
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.is_synthetic() {
            if let Some(objects) = self.objects {
                if objects < 100 {
                    return Err(Error::Config(format!(
                        "{path}.objects: synthetic dataset needs at least 100 objects"
                    )));
                }
            }
            if let Some(features) = self.features {
                if features < 6 {
                    return Err(Error::Config(format!(
                        "{path}.features: synthetic dataset needs at least 6 features"
                    )));
                }
            }
        } else if self.target_column.is_none() {
            return Err(Error::Config(format!(
                "{path}.target_column: required for CSV datasets"
            )));
        }
        Ok(())
    }

    /// Datasets are seeded by the dataset seed, fixed per experiment so all
    /// modes and run seeds see identical splits.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        if self.is_synthetic() {
            Dataset::synthesize(
                self.objects.unwrap_or(10_000),
                self.features.unwrap_or(30),
                seed,
            )
        } else {
            let column = self.target_column.as_deref().ok_or_else(|| {
                Error::Config("dataset.target_column: required for CSV datasets".to_string())
            })?;
            Dataset::load_csv(Path::new(&self.source), column, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Leading layers trained as the autoencoder encoder (s).
    #[serde(default)]
    pub autoencoder_layers: usize,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ArchitectureSpec {
    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "{path}.hidden: layer widths must be positive"
            )));
        }
        if self.autoencoder_layers >= self.layer_count() {
            return Err(Error::Config(format!(
                "{path}.autoencoder_layers: must be smaller than the layer count {}",
                self.layer_count()
            )));
        }
        Ok(())
    }

    pub fn build_model(&self, input_dim: usize, seed: u64) -> Result<LayeredModel> {
        LayeredModel::random(
            input_dim,
            &self.hidden,
            self.activation,
            self.autoencoder_layers,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub iterations: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_robustness_window")]
    pub robustness_window: usize,
}

fn default_learning_rate() -> f64 {
    1e-2
}
fn default_batch_size() -> usize {
    32
}
fn default_record_every() -> usize {
    1
}
fn default_robustness_window() -> usize {
    50
}

impl TrainingSpec {
    pub fn to_options(&self) -> TrainOptions {
        TrainOptions {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            record_every: self.record_every,
            robustness_window: self.robustness_window,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config(format!(
                "{path}.iterations: must be positive"
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "{path}.learning_rate: must be positive and finite"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{path}.batch_size: must be positive"
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config(format!(
                "{path}.record_every: must be positive"
            )));
        }
        if self.robustness_window < 2 {
            return Err(Error::Config(format!(
                "{path}.robustness_window: must be at least 2"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub mode: ScheduleMode,
    /// Per-layer regularizer weights for static mode, keyed by the
    /// canonical names (lasso, layers, orthogonal, ridge, highfreq,
    /// localdiff). One map per layer.
    #[serde(default)]
    pub static_matrix: Option<Vec<BTreeMap<String, f64>>>,
    /// Override for the expert pretraining budget.
    #[serde(default)]
    pub pretrain_iterations: Option<usize>,
}

impl ScheduleBlock {
    pub fn validate(&self, path: &str, layer_count: usize) -> Result<()> {
        if self.mode == ScheduleMode::Static {
            let matrix = self.static_matrix.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "{path}.static_matrix: required when {path}.mode is \"static\""
                ))
            })?;
            if matrix.len() != layer_count {
                return Err(Error::Config(format!(
                    "{path}.static_matrix: expected {layer_count} layer rows, got {}",
                    matrix.len()
                )));
            }
            for (i, row) in matrix.iter().enumerate() {
                for (name, value) in row {
                    RegKind::from_name(name).map_err(|_| {
                        Error::Config(format!(
                            "{path}.static_matrix[{i}]: unknown regularizer \"{name}\""
                        ))
                    })?;
                    if !value.is_finite() || *value < 0.0 {
                        return Err(Error::Config(format!(
                            "{path}.static_matrix[{i}].{name}: must be finite and non-negative"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn static_lambda(&self, layer_count: usize) -> Result<LambdaMatrix> {
        let matrix = self.static_matrix.as_ref().ok_or_else(|| {
            Error::Config("schedule.static_matrix: required for mode=static".to_string())
        })?;
        let mut rows = Vec::with_capacity(layer_count);
        for row in matrix {
            let mut values = [0.0; REGULARIZER_COUNT];
            for (name, value) in row {
                values[RegKind::from_name(name)?.index()] = *value;
            }
            rows.push(values);
        }
        Ok(LambdaMatrix::from_rows(rows, 0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaRegSpec {
    #[serde(default = "default_population")]
    pub population_size: usize,
    #[serde(default = "default_reg_generations")]
    pub generations: usize,
    #[serde(default = "default_mutation_rate")]
    pub mutation_rate: f64,
    #[serde(default = "default_crossover_rate")]
    pub crossover_rate: f64,
    #[serde(default = "default_elite")]
    pub elite_count: usize,
    #[serde(default = "default_eval_steps")]
    pub eval_steps: usize,
}

fn default_population() -> usize {
    20
}
fn default_reg_generations() -> usize {
    15
}
fn default_mutation_rate() -> f64 {
    0.2
}
fn default_crossover_rate() -> f64 {
    0.7
}
fn default_elite() -> usize {
    1
}
fn default_eval_steps() -> usize {
    5
}

impl Default for GaRegSpec {
    fn default() -> Self {
        GaRegSpec {
            population_size: default_population(),
            generations: default_reg_generations(),
            mutation_rate: default_mutation_rate(),
            crossover_rate: default_crossover_rate(),
            elite_count: default_elite(),
            eval_steps: default_eval_steps(),
        }
    }
}

impl GaRegSpec {
    fn ga_config(&self, rng_seed: u64) -> GaConfig {
        GaConfig {
            population_size: self.population_size,
            generations: self.generations,
            mutation_rate: self.mutation_rate,
            crossover_rate: self.crossover_rate,
            elite_count: self.elite_count,
            rng_seed,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.ga_config(0)
            .validate()
            .map_err(|e| Error::Config(format!("{path}: {e}")))?;
        if self.eval_steps == 0 {
            return Err(Error::Config(format!(
                "{path}.eval_steps: must be positive"
            )));
        }
        Ok(())
    }

    pub fn to_options(&self, rng_seed: u64) -> GaRegOptions {
        GaRegOptions {
            ga: self.ga_config(rng_seed),
            eval_steps: self.eval_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaNasSpec {
    #[serde(default = "default_population")]
    pub population_size: usize,
    #[serde(default = "default_nas_generations")]
    pub generations: usize,
    #[serde(default = "default_mutation_rate")]
    pub mutation_rate: f64,
    #[serde(default = "default_crossover_rate")]
    pub crossover_rate: f64,
    #[serde(default = "default_elite")]
    pub elite_count: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_drop_probability")]
    pub drop_probability: f64,
    #[serde(default = "default_fine_tune")]
    pub fine_tune: bool,
    #[serde(default = "default_fine_tune_fraction")]
    pub fine_tune_fraction: f64,
    #[serde(default)]
    pub lambda_layers: f64,
}

fn default_nas_generations() -> usize {
    30
}
fn default_mu() -> f64 {
    0.05
}
fn default_drop_probability() -> f64 {
    0.1
}
fn default_fine_tune() -> bool {
    true
}
fn default_fine_tune_fraction() -> f64 {
    0.1
}

impl Default for GaNasSpec {
    fn default() -> Self {
        GaNasSpec {
            population_size: default_population(),
            generations: default_nas_generations(),
            mutation_rate: default_mutation_rate(),
            crossover_rate: default_crossover_rate(),
            elite_count: default_elite(),
            mu: default_mu(),
            drop_probability: default_drop_probability(),
            fine_tune: default_fine_tune(),
            fine_tune_fraction: default_fine_tune_fraction(),
            lambda_layers: 0.0,
        }
    }
}

impl GaNasSpec {
    pub fn validate(&self, path: &str) -> Result<()> {
        GaConfig {
            population_size: self.population_size,
            generations: self.generations,
            mutation_rate: self.mutation_rate,
            crossover_rate: self.crossover_rate,
            elite_count: self.elite_count,
            rng_seed: 0,
        }
        .validate()
        .map_err(|e| Error::Config(format!("{path}: {e}")))?;
        if self.mu < 0.0 || !self.mu.is_finite() {
            return Err(Error::Config(format!("{path}.mu: must be non-negative")));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config(format!(
                "{path}.drop_probability: must lie in [0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&self.fine_tune_fraction) {
            return Err(Error::Config(format!(
                "{path}.fine_tune_fraction: must lie in [0, 1]"
            )));
        }
        if self.lambda_layers < 0.0 {
            return Err(Error::Config(format!(
                "{path}.lambda_layers: must be non-negative"
            )));
        }
        Ok(())
    }

    pub fn to_options(&self, rng_seed: u64, robustness_window: usize) -> PruneOptions {
        PruneOptions {
            ga: GaConfig {
                population_size: self.population_size,
                generations: self.generations,
                mutation_rate: self.mutation_rate,
                crossover_rate: self.crossover_rate,
                elite_count: self.elite_count,
                rng_seed,
            },
            mu: self.mu,
            drop_probability: self.drop_probability,
            lambda_layers: self.lambda_layers,
            robustness_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub architecture: ArchitectureSpec,
    pub training: TrainingSpec,
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub ga_reg: GaRegSpec,
    #[serde(default)]
    pub ga_nas: GaNasSpec,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Seed of the dataset shuffle/generator, shared by every run.
    #[serde(default)]
    pub dataset_seed: u64,
    #[serde(default)]
    pub compare_modes: Option<Vec<ScheduleMode>>,
    #[serde(default)]
    pub compare_datasets: Option<Vec<DatasetSpec>>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Check every module constraint before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate("dataset")?;
        self.architecture.validate("architecture")?;
        self.training.validate("training")?;
        let k = self.architecture.layer_count();
        self.schedule.validate("schedule", k)?;
        self.ga_reg.validate("ga_reg")?;
        self.ga_nas.validate("ga_nas")?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed required".to_string()));
        }
        let min_iterations = if self.schedule.mode == ScheduleMode::Expert {
            k - self.architecture.autoencoder_layers
        } else {
            k
        };
        if self.training.iterations < min_iterations {
            return Err(Error::Config(format!(
                "training.iterations: need at least one iteration per schedule segment ({min_iterations})"
            )));
        }
        if self.schedule.mode == ScheduleMode::Expert
            && self.architecture.autoencoder_layers > 0
            && self.architecture.autoencoder_layers >= k
        {
            return Err(Error::Config(
                "architecture.autoencoder_layers: must be below the layer count".to_string(),
            ));
        }
        if let Some(modes) = &self.compare_modes {
            if modes.contains(&ScheduleMode::Static) {
                self.schedule.validate("schedule", k)?;
                if self.schedule.static_matrix.is_none() {
                    return Err(Error::Config(
                        "schedule.static_matrix: required because compare_modes includes \"static\""
                            .to_string(),
                    ));
                }
            }
        }
        if let Some(datasets) = &self.compare_datasets {
            for (i, spec) in datasets.iter().enumerate() {
                spec.validate(&format!("compare_datasets[{i}]"))?;
            }
        }
        Ok(())
    }

    fn build_schedule(&self, mode: ScheduleMode) -> Result<ScheduleSpec> {
        let k = self.architecture.layer_count();
        let t = self.training.iterations;
        match mode {
            ScheduleMode::Expert => {
                let mut spec = ScheduleSpec::expert(k, self.architecture.autoencoder_layers, t)?;
                if let Some(pretrain) = self.schedule.pretrain_iterations {
                    spec.pretrain_iterations = pretrain;
                }
                Ok(spec)
            }
            ScheduleMode::Static => {
                let mut spec = ScheduleSpec::new(mode, t, k)?;
                spec.static_matrix = Some(self.schedule.static_lambda(k)?);
                Ok(spec)
            }
            _ => ScheduleSpec::new(mode, t, k),
        }
    }
}

/// Final scalars of one training run, serialized as summary.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub mode: String,
    pub seed: u64,
    pub iterations: usize,
    pub layers: usize,
    pub autoencoder_layers: usize,
    pub test_mae: f64,
    pub val_mae: f64,
    pub complexity: usize,
    pub robustness: Option<f64>,
    pub parameter_variance: f64,
}

/// Model plus mask, serialized as checkpoint.json. Weights survive the JSON
/// round trip value-exact (shortest-roundtrip float encoding).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: LayeredModel,
    pub mask: StructureMask,
}

/// In-memory result of one (dataset, mode, seed) run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: Summary,
    pub records: Vec<RunRecord>,
    pub checkpoint: Checkpoint,
    pub ga_reg: Option<GaRegOutcome>,
}

/// Train one model under the given mode and seed. The model
/// initialization and batch stream depend only on the seed, so different
/// modes under the same seed are exactly paired.
pub fn run_single(
    config: &ExperimentConfig,
    dataset: &Dataset,
    mode: ScheduleMode,
    seed: u64,
) -> Result<RunArtifacts> {
    let train_opts = config.training.to_options();
    let model = config
        .architecture
        .build_model(dataset.n_features(), derive_seed(seed, &[STREAM_MODEL_INIT]))?;
    let mask = StructureMask::full(&model);

    let (trained, mask, records, ga_outcome) = match mode {
        ScheduleMode::Sequential => {
            let ga_opts = config
                .ga_reg
                .to_options(derive_seed(seed, &[STREAM_GA_SEARCH]));
            let (trained, mask, outcome) = run_ga_reg(
                model,
                mask,
                dataset,
                train_opts,
                &ga_opts,
                seed,
                None,
            )?;
            let records = outcome.records.clone();
            (trained, mask, records, Some(outcome))
        }
        ScheduleMode::Cumulative | ScheduleMode::Accumulated | ScheduleMode::Ordinal => {
            // search for the per-layer vectors on a sacrificial copy, then
            // train the reported model from scratch under the schedule
            let ga_opts = config
                .ga_reg
                .to_options(derive_seed(seed, &[STREAM_GA_SEARCH]));
            let (_, _, outcome) = run_ga_reg(
                model.clone(),
                mask.clone(),
                dataset,
                train_opts,
                &ga_opts,
                derive_seed(seed, &[STREAM_GA_SEARCH]),
                None,
            )?;
            let mut spec = config.build_schedule(mode)?;
            for (layer, row) in outcome.lambda_matrix.rows().iter().enumerate() {
                spec.set_layer_vector(layer, *row);
            }
            let mut training = TrainingLoop::new(model, mask, dataset, train_opts, seed)?;
            training.run_schedule(&spec)?;
            let (trained, mask, records) = training.into_parts();
            (trained, mask, records, Some(outcome))
        }
        _ => {
            let spec = config.build_schedule(mode)?;
            let mut training = TrainingLoop::new(model, mask, dataset, train_opts, seed)?;
            training.run_schedule(&spec)?;
            let (trained, mask, records) = training.into_parts();
            (trained, mask, records, None)
        }
    };

    let test_inputs = dataset.inputs(&dataset.splits.test);
    let predictions = crate::model::predict(&trained, &mask, &test_inputs)?;
    let test_mae = crate::metrics::mae(&predictions, &dataset.targets_at(&dataset.splits.test))?;
    let last = records.last().ok_or_else(|| {
        Error::Runtime("training produced no records".to_string())
    })?;
    let summary = Summary {
        dataset: dataset.name.clone(),
        mode: mode.name().to_string(),
        seed,
        iterations: config.training.iterations,
        layers: config.architecture.layer_count(),
        autoencoder_layers: config.architecture.autoencoder_layers,
        test_mae,
        val_mae: last.val_mae,
        complexity: last.complexity,
        robustness: last.robustness,
        parameter_variance: last.parameter_variance,
    };
    Ok(RunArtifacts {
        summary,
        records,
        checkpoint: Checkpoint {
            model: trained,
            mask,
        },
        ga_reg: ga_outcome,
    })
}

/// Write bytes to a temp file in the target directory, then rename over the
/// destination so a rerun overwrites but never corrupts.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item)?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

pub fn run_dir(out: &Path, dataset: &str, mode: ScheduleMode, seed: u64) -> PathBuf {
    out.join(format!("{dataset}_{}_seed{seed}", mode.name()))
}

fn write_run(out: &Path, mode: ScheduleMode, artifacts: &RunArtifacts) -> Result<PathBuf> {
    let dir = run_dir(out, &artifacts.summary.dataset, mode, artifacts.summary.seed);
    write_jsonl(&dir.join("records.jsonl"), &artifacts.records)?;
    write_json(&dir.join("checkpoint.json"), &artifacts.checkpoint)?;
    write_json(&dir.join("summary.json"), &artifacts.summary)?;
    if let Some(outcome) = &artifacts.ga_reg {
        write_jsonl(&dir.join("ga_reg_log.jsonl"), &outcome.log)?;
        write_json(&dir.join("lambda_matrix.json"), &outcome.lambda_matrix)?;
    }
    Ok(dir)
}

/// Train every configured seed under the configured mode and write one
/// artifact directory per run.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<Summary>> {
    config.validate()?;
    let dataset = config.dataset.load(config.dataset_seed)?;
    let results: Vec<Result<RunArtifacts>> = config
        .seeds
        .par_iter()
        .map(|&seed| run_single(config, &dataset, config.schedule.mode, seed))
        .collect();
    let mut summaries = Vec::new();
    for result in results {
        let artifacts = result?;
        write_run(&config.output_dir, config.schedule.mode, &artifacts)?;
        summaries.push(artifacts.summary);
    }
    Ok(summaries)
}

/// One comparison cell: per-seed test errors or a failure note.
#[derive(Debug, Clone)]
enum Cell {
    Values(Vec<f64>),
    Failed(String),
}

/// Run every (dataset, mode, seed) combination and emit a CSV table of mean
/// test MAE with standard errors; the best mode per dataset is flagged with
/// a trailing `*`.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let modes = config
        .compare_modes
        .clone()
        .ok_or_else(|| Error::Config("compare_modes: required for compare".to_string()))?;
    if modes.len() < 2 {
        return Err(Error::Config(
            "compare_modes: need at least two modes".to_string(),
        ));
    }
    if config.seeds.len() < 3 {
        eprintln!(
            "warning: {} seed(s) configured; standard errors need at least 3",
            config.seeds.len()
        );
    }
    let dataset_specs = config
        .compare_datasets
        .clone()
        .unwrap_or_else(|| vec![config.dataset.clone()]);

    let mut rows: Vec<(String, Vec<Cell>)> = Vec::new();
    for spec in &dataset_specs {
        let dataset = match spec.load(config.dataset_seed) {
            Ok(d) => d,
            Err(e) => {
                rows.push((
                    spec.source.clone(),
                    vec![Cell::Failed(format!("dataset: {e}")); modes.len()],
                ));
                continue;
            }
        };
        let cells: Vec<Cell> = modes
            .iter()
            .map(|&mode| {
                let per_seed: Vec<Result<RunArtifacts>> = config
                    .seeds
                    .par_iter()
                    .map(|&seed| run_single(config, &dataset, mode, seed))
                    .collect();
                let mut values = Vec::new();
                for result in per_seed {
                    match result {
                        Ok(artifacts) => {
                            if let Err(e) = write_run(&config.output_dir, mode, &artifacts) {
                                return Cell::Failed(e.to_string());
                            }
                            values.push(artifacts.summary.test_mae);
                        }
                        Err(e) => return Cell::Failed(e.to_string()),
                    }
                }
                Cell::Values(values)
            })
            .collect();
        rows.push((dataset.name.clone(), cells));
    }

    let mut csv = String::new();
    csv.push_str("dataset");
    for mode in &modes {
        csv.push(',');
        csv.push_str(mode.name());
    }
    csv.push('\n');
    for (name, cells) in &rows {
        let best = cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| match c {
                Cell::Values(v) if !v.is_empty() => Some((i, mean(v))),
                _ => None,
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        csv.push_str(name);
        for (i, cell) in cells.iter().enumerate() {
            csv.push(',');
            match cell {
                Cell::Values(values) => {
                    let m = mean(values);
                    if values.len() >= 2 {
                        csv.push_str(&format!("{m:.4} ± {:.4}", standard_error(values)));
                    } else {
                        csv.push_str(&format!("{m:.4}"));
                    }
                    if best == Some(i) {
                        csv.push('*');
                    }
                }
                Cell::Failed(reason) => {
                    eprintln!("warning: {name}/{}: {reason}", modes[i].name());
                    csv.push_str("missing");
                }
            }
        }
        csv.push('\n');
    }
    let path = config.output_dir.join("comparison.csv");
    write_atomic(&path, csv.as_bytes())?;
    Ok(path)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn standard_error(values: &[f64]) -> f64 {
    let m = mean(values);
    let var =
        values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (var / values.len() as f64).sqrt()
}

/// Final scalars of one pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub dataset: String,
    pub seed: u64,
    pub initial_complexity: usize,
    pub final_complexity: usize,
    pub test_mae_before: f64,
    pub test_mae_after: f64,
    pub fine_tune_iterations: usize,
}

/// Prune a trained checkpoint with the binary-mask search, optionally
/// fine-tune under the pruned mask, and write mask, checkpoint, trajectory
/// CSV and summary per seed.
pub fn cmd_prune(config: &ExperimentConfig, checkpoint_path: &Path) -> Result<Vec<PruneSummary>> {
    config.validate()?;
    let text = fs::read_to_string(checkpoint_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", checkpoint_path.display())))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", checkpoint_path.display())))?;
    checkpoint.mask.matches(&checkpoint.model).map_err(|e| {
        Error::Schema(format!("checkpoint mask does not fit its model: {e}"))
    })?;

    let dataset = config.dataset.load(config.dataset_seed)?;
    if checkpoint.model.input_dim() != dataset.n_features() {
        return Err(Error::Schema(format!(
            "checkpoint expects {} input features, dataset has {}",
            checkpoint.model.input_dim(),
            dataset.n_features()
        )));
    }
    let expected_hidden = config.architecture.hidden.clone();
    if checkpoint.model.hidden_widths() != expected_hidden {
        return Err(Error::Schema(format!(
            "checkpoint hidden widths {:?} do not match architecture.hidden {:?}",
            checkpoint.model.hidden_widths(),
            expected_hidden
        )));
    }

    // zero out previously masked weights so frozen-weight fitness
    // evaluation matches the checkpoint's masked behavior exactly
    let mut base_model = checkpoint.model.clone();
    for (i, layer) in base_model.layers_mut().iter_mut().enumerate() {
        layer.weights = crate::core_math::hadamard(&layer.weights, checkpoint.mask.layer(i))?;
    }

    let results: Vec<Result<(u64, PruneSummary)>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let opts = config.ga_nas.to_options(
                derive_seed(seed, &[STREAM_PRUNE]),
                config.training.robustness_window.min(config.ga_nas.generations.max(2)),
            );
            let (neuron_mask, trajectory) = ga_nas::prune(&base_model, &dataset, &opts)?;
            let pruned_mask = combine_masks(
                &checkpoint.mask,
                &neuron_mask.expand(&base_model)?,
            )?;

            let test_inputs = dataset.inputs(&dataset.splits.test);
            let before = crate::metrics::mae(
                &crate::model::predict(&base_model, &checkpoint.mask, &test_inputs)?,
                &dataset.targets_at(&dataset.splits.test),
            )?;

            let mut model = base_model.clone();
            let fine_tune_iterations = if config.ga_nas.fine_tune {
                (config.training.iterations as f64 * config.ga_nas.fine_tune_fraction) as usize
            } else {
                0
            };
            if fine_tune_iterations > 0 {
                let mut opts = config.training.to_options();
                opts.iterations = fine_tune_iterations.max(1);
                let mut training =
                    TrainingLoop::new(model, pruned_mask.clone(), &dataset, opts, seed)?;
                let lambdas = LambdaMatrix::zeros(training.model().depth());
                for _ in 0..fine_tune_iterations {
                    training.auxiliary_step(&lambdas)?;
                }
                let (tuned, _, _) = training.into_parts();
                model = tuned;
            }
            let after = crate::metrics::mae(
                &crate::model::predict(&model, &pruned_mask, &test_inputs)?,
                &dataset.targets_at(&dataset.splits.test),
            )?;

            let summary = PruneSummary {
                dataset: dataset.name.clone(),
                seed,
                initial_complexity: checkpoint.mask.active_count(),
                final_complexity: pruned_mask.active_count(),
                test_mae_before: before,
                test_mae_after: after,
                fine_tune_iterations,
            };

            let dir = config
                .output_dir
                .join(format!("prune_{}_seed{seed}", dataset.name));
            write_json(&dir.join("mask.json"), &neuron_mask)?;
            write_json(
                &dir.join("pruned_checkpoint.json"),
                &Checkpoint {
                    model,
                    mask: pruned_mask,
                },
            )?;
            write_atomic(
                &dir.join("cres.csv"),
                trajectory_csv(&trajectory).as_bytes(),
            )?;
            write_json(&dir.join("prune_summary.json"), &summary)?;
            Ok((seed, summary))
        })
        .collect();

    let mut summaries: Vec<(u64, PruneSummary)> = Vec::new();
    for result in results {
        summaries.push(result?);
    }
    summaries.sort_by_key(|(seed, _)| *seed);
    Ok(summaries.into_iter().map(|(_, s)| s).collect())
}

fn combine_masks(a: &StructureMask, b: &StructureMask) -> Result<StructureMask> {
    let layers = a
        .layers()
        .iter()
        .zip(b.layers())
        .map(|(x, y)| crate::core_math::hadamard(x, y))
        .collect::<Result<Vec<_>>>()?;
    StructureMask::from_matrices(layers)
}

fn trajectory_csv(trajectory: &[RunRecord]) -> String {
    let mut csv = String::from("generation,complexity,error,robustness\n");
    for record in trajectory {
        let robustness = record
            .robustness
            .map(|r| r.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{robustness}\n",
            record.iteration, record.complexity, record.val_mae
        ));
    }
    csv
}
