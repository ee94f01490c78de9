//! Algorithmic schedule selection: a genetic search over per-layer
//! metaparameter vectors interleaved with the live training loop.
//!
//! The iteration axis is split into one segment per layer. Within a
//! segment, each GA generation scores every candidate vector by cloning the
//! live model, training it a few steps with the candidate applied to the
//! segment's layer, and measuring validation MAE; a candidate replaces the
//! incumbent only when it lowers that error, and the unregularized baseline
//! is re-scored every generation so the live vector never falls behind it.
//! Live training proceeds between generations under the incumbent, with
//! earlier layers' accepted vectors kept active (cumulative semantics).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::{derive_seed, Evolution, GaConfig, Genome};
use crate::metrics::{self, RunRecord};
use crate::model::{backward, predict, sgd_step, LayeredModel, StructureMask};
use crate::regularizers::{LambdaMatrix, REGULARIZER_COUNT};
use crate::schedule::{ScheduleMode, ScheduleSpec};
use crate::trainer::{TrainOptions, TrainingLoop};

/// Stream tags for the GA-REG RNG hierarchy.
const STREAM_POPULATION: u64 = 20;
const STREAM_EVAL_BATCHES: u64 = 21;
const STREAM_ENGINE: u64 = 22;

/// Log-uniform sampling range for initial candidate genes.
const INIT_GENE_MIN: f64 = 1e-4;
const INIT_GENE_MAX: f64 = 1e1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaRegOptions {
    pub ga: GaConfig,
    /// Training steps used to score one candidate on a model clone.
    pub eval_steps: usize,
}

impl Default for GaRegOptions {
    fn default() -> Self {
        GaRegOptions {
            ga: GaConfig::default(),
            eval_steps: 5,
        }
    }
}

/// One candidate-evaluation event, serialized as a JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaRegLogRecord {
    pub iteration: usize,
    pub layer: usize,
    pub generation: usize,
    pub candidate: String,
    pub lambda: [f64; REGULARIZER_COUNT],
    #[serde(rename = "val_MAE")]
    pub val_mae: f64,
    pub accepted: bool,
}

/// Everything a GA-REG run produces besides the trained model.
#[derive(Debug, Clone)]
pub struct GaRegOutcome {
    pub lambda_matrix: LambdaMatrix,
    pub records: Vec<RunRecord>,
    pub log: Vec<GaRegLogRecord>,
}

/// Search state for one layer's segment.
#[derive(Debug, Clone)]
pub struct GaRegState {
    pub layer: usize,
    pub incumbent: [f64; REGULARIZER_COUNT],
    pub incumbent_error: f64,
    /// Rows accepted for already-finished layers.
    pub filled: Vec<[f64; REGULARIZER_COUNT]>,
}

fn genome_to_row(genome: &Genome) -> [f64; REGULARIZER_COUNT] {
    match genome {
        Genome::Real(v) => {
            let mut row = [0.0; REGULARIZER_COUNT];
            row.copy_from_slice(v);
            row
        }
        Genome::Bits(_) => unreachable!("GA-REG genomes are real-valued"),
    }
}

fn initial_population(size: usize, rng: &mut ChaCha8Rng) -> Vec<Genome> {
    let mut population = Vec::with_capacity(size);
    // the unregularized incumbent is always representable
    population.push(Genome::Real(vec![0.0; REGULARIZER_COUNT]));
    let ln_min = INIT_GENE_MIN.ln();
    let ln_max = INIT_GENE_MAX.ln();
    while population.len() < size {
        let genes = (0..REGULARIZER_COUNT)
            .map(|_| rng.gen_range(ln_min..ln_max).exp())
            .collect();
        population.push(Genome::Real(genes));
    }
    population
}

/// Validation probes are averaged over the tail of a candidate's training
/// rollout, spaced this many steps apart.
const PROBE_SPACING: usize = 50;

fn val_mae_of(model: &LayeredModel, mask: &StructureMask, data: &Dataset) -> f64 {
    let val = &data.splits.val;
    let inputs = data.inputs(val);
    let predictions = match predict(model, mask, &inputs) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    match metrics::mae(&predictions, &data.targets_at(val)) {
        Ok(m) if m.is_finite() => m,
        _ => f64::INFINITY,
    }
}

/// Score one candidate row: clone the segment-start model, train it with
/// the candidate active on `layer` (earlier accepted rows stay on), and
/// average validation MAE over the second half of the rollout so one
/// oscillation phase cannot decide the comparison. A non-finite result
/// scores as infinitely bad instead of failing the search.
#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    model: &LayeredModel,
    mask: &StructureMask,
    data: &Dataset,
    filled: &[[f64; REGULARIZER_COUNT]],
    layer: usize,
    row: [f64; REGULARIZER_COUNT],
    batches: &[Vec<usize>],
    learning_rate: f64,
) -> f64 {
    let mut lambdas = LambdaMatrix::zeros(model.depth());
    for (i, filled_row) in filled.iter().enumerate().take(layer) {
        lambdas.set_row(i, *filled_row);
    }
    lambdas.set_row(layer, row);

    let mut candidate_model = model.clone();
    let steps = batches.len();
    let mut probes = Vec::new();
    for (step, indices) in batches.iter().enumerate() {
        let batch = data.batch(indices);
        let grad = match backward(&candidate_model, mask, &batch, &lambdas) {
            Ok(g) => g,
            Err(_) => return f64::INFINITY,
        };
        if sgd_step(&mut candidate_model, mask, &grad, learning_rate).is_err() {
            return f64::INFINITY;
        }
        let in_tail = step + 1 > steps / 2;
        if in_tail && ((step + 1) % PROBE_SPACING == 0 || step + 1 == steps) {
            probes.push(val_mae_of(&candidate_model, mask, data));
        }
    }
    let score = probes.iter().sum::<f64>() / probes.len() as f64;
    if score.is_finite() {
        score
    } else {
        f64::INFINITY
    }
}

/// Evolve the metaparameter vector of one layer across its iteration
/// segment, training the live loop under the incumbent between generations.
/// `initial_rows` overrides the sampled population (degenerate and
/// diagnostic runs).
#[allow(clippy::too_many_arguments)]
pub fn optimize_layer(
    training: &mut TrainingLoop,
    spec: &mut ScheduleSpec,
    state: &mut GaRegState,
    segment: (usize, usize),
    opts: &GaRegOptions,
    seed: u64,
    initial_rows: Option<&[[f64; REGULARIZER_COUNT]]>,
    log: &mut Vec<GaRegLogRecord>,
) -> Result<[f64; REGULARIZER_COUNT]> {
    if training.data().splits.val.is_empty() {
        return Err(Error::Config("validation split is empty".to_string()));
    }
    let layer = state.layer;
    let segment_len = segment.1 - segment.0;
    if segment_len == 0 {
        return Err(Error::Config("empty schedule segment".to_string()));
    }
    let mut population: Vec<Genome> = match initial_rows {
        Some(rows) => rows.iter().map(|r| Genome::Real(r.to_vec())).collect(),
        None => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_POPULATION, layer as u64]));
            initial_population(opts.ga.population_size, &mut rng)
        }
    };
    if population.is_empty() {
        return Err(Error::Config("empty population".to_string()));
    }
    let mut engine = Evolution::new(GaConfig {
        rng_seed: derive_seed(seed, &[STREAM_ENGINE, layer as u64]),
        ..opts.ga
    });

    let generations = opts.ga.generations.max(1);
    let chunk = segment_len / generations;
    let mut consumed = 0;
    let zero_row = [0.0; REGULARIZER_COUNT];

    // candidates are scored from the segment-start state, the same state
    // the schedule will replay this row from
    let segment_model = training.model().clone();

    for generation in 0..generations {
        // fixed evaluation batches: identical for every candidate this round
        let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[STREAM_EVAL_BATCHES, layer as u64, generation as u64],
        ));
        let train_split = &training.data().splits.train;
        let batch_size = training.options().batch_size.min(train_split.len());
        let batches: Vec<Vec<usize>> = (0..opts.eval_steps)
            .map(|_| {
                (0..batch_size)
                    .map(|_| train_split[batch_rng.gen_range(0..train_split.len())])
                    .collect()
            })
            .collect();

        let score = |row: [f64; REGULARIZER_COUNT]| {
            evaluate_candidate(
                &segment_model,
                training.mask(),
                training.data(),
                &state.filled,
                layer,
                row,
                &batches,
                training.options().learning_rate,
            )
        };

        let rows: Vec<[f64; REGULARIZER_COUNT]> = population.iter().map(genome_to_row).collect();
        let mut scores: Vec<f64> = rows.par_iter().map(|&row| score(row)).collect();
        let incumbent_error = score(state.incumbent);
        let baseline_error = score(zero_row);

        let mut best_idx = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.total_cmp(&scores[best_idx]).is_lt() {
                best_idx = i;
            }
        }
        let iteration = training.iteration();
        for (i, (&row, &error)) in rows.iter().zip(&scores).enumerate() {
            log.push(GaRegLogRecord {
                iteration,
                layer,
                generation,
                candidate: format!("g{generation}c{i}"),
                lambda: row,
                val_mae: error,
                accepted: false,
            });
        }

        // step-3 acceptance: switch only on a strict validation improvement
        state.incumbent_error = incumbent_error;
        if scores[best_idx] < incumbent_error {
            state.incumbent = rows[best_idx];
            state.incumbent_error = scores[best_idx];
        }
        // the unregularized baseline floors the incumbent
        if baseline_error < state.incumbent_error {
            state.incumbent = zero_row;
            state.incumbent_error = baseline_error;
        }
        assert!(
            state.incumbent_error <= baseline_error,
            "live metaparameters fell behind the zero baseline"
        );
        log.push(GaRegLogRecord {
            iteration,
            layer,
            generation,
            candidate: "incumbent".to_string(),
            lambda: state.incumbent,
            val_mae: state.incumbent_error,
            accepted: true,
        });

        // live training under the incumbent for this generation's share
        spec.set_layer_vector(layer, state.incumbent);
        let steps = if generation + 1 == generations {
            segment_len - consumed
        } else {
            chunk
        };
        for t in 0..steps {
            let lambdas = spec.resolve_lambda(segment.0 + consumed + t)?;
            training.step(&lambdas)?;
        }
        consumed += steps;

        if generation + 1 < generations {
            population = engine.next_generation(&population, &scores)?;
            // keep score ordering deterministic in the next round
            scores.clear();
        }
    }
    debug_assert_eq!(consumed, segment_len);
    Ok(state.incumbent)
}

/// Run the full GA-REG schedule search: split the iteration axis into one
/// segment per layer, fill each row while training continuously, and return
/// the trained model together with the completed metaparameter matrix.
pub fn run_ga_reg(
    model: LayeredModel,
    mask: StructureMask,
    data: &Dataset,
    train_opts: TrainOptions,
    opts: &GaRegOptions,
    seed: u64,
    forced_population: Option<&[[f64; REGULARIZER_COUNT]]>,
) -> Result<(LayeredModel, StructureMask, GaRegOutcome)> {
    let k = model.depth();
    if train_opts.iterations < k {
        return Err(Error::Config(format!(
            "GA-REG needs at least one iteration per layer: T = {} < k = {k}",
            train_opts.iterations
        )));
    }
    let mut spec = ScheduleSpec::new(ScheduleMode::Sequential, train_opts.iterations, k)?;
    let mut training = TrainingLoop::new(model, mask, data, train_opts, seed)?;
    let segments = spec.segments();
    let mut log = Vec::new();
    let mut filled: Vec<[f64; REGULARIZER_COUNT]> = Vec::with_capacity(k);
    for (layer, &segment) in segments.iter().enumerate() {
        let mut state = GaRegState {
            layer,
            incumbent: [0.0; REGULARIZER_COUNT],
            incumbent_error: f64::INFINITY,
            filled: filled.clone(),
        };
        let row = optimize_layer(
            &mut training,
            &mut spec,
            &mut state,
            segment,
            opts,
            derive_seed(seed, &[layer as u64]),
            forced_population,
            &mut log,
        )?;
        spec.set_layer_vector(layer, row);
        filled.push(row);
    }
    debug_assert_eq!(training.iteration(), spec.total_iterations);
    let lambda_matrix = LambdaMatrix::from_rows(filled, 0.0, 1.0);
    let (model, mask, records) = training.into_parts();
    Ok((
        model,
        mask,
        GaRegOutcome {
            lambda_matrix,
            records,
            log,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn dataset() -> Dataset {
        Dataset::synthesize(400, 6, 17).unwrap()
    }

    fn options(iterations: usize) -> TrainOptions {
        TrainOptions {
            iterations,
            learning_rate: 1e-3,
            batch_size: 16,
            record_every: 1,
            robustness_window: 10,
        }
    }

    fn ga_options(population: usize, generations: usize) -> GaRegOptions {
        GaRegOptions {
            ga: GaConfig {
                population_size: population,
                generations,
                mutation_rate: 0.2,
                crossover_rate: 0.7,
                elite_count: 1,
                rng_seed: 0,
            },
            eval_steps: 5,
        }
    }

    #[test]
    fn returned_matrix_has_expected_shape() {
        let data = dataset();
        let model = LayeredModel::random(6, &[5], Activation::Relu, 0, 3).unwrap();
        let mask = StructureMask::full(&model);
        let (_, _, outcome) = run_ga_reg(
            model,
            mask,
            &data,
            options(40),
            &ga_options(6, 3),
            11,
            None,
        )
        .unwrap();
        assert_eq!(outcome.lambda_matrix.layer_count(), 2);
        for i in 0..2 {
            for j in 0..REGULARIZER_COUNT {
                assert!(outcome.lambda_matrix.get(i, j) >= 0.0);
            }
        }
        // every live iteration was trained and recorded
        assert_eq!(outcome.records.len(), 40);
    }

    #[test]
    fn single_layer_model_gives_one_row() {
        let data = dataset();
        let model = LayeredModel::random(6, &[], Activation::Relu, 0, 4).unwrap();
        let mask = StructureMask::full(&model);
        let (_, _, outcome) =
            run_ga_reg(model, mask, &data, options(20), &ga_options(4, 2), 5, None).unwrap();
        assert_eq!(outcome.lambda_matrix.layer_count(), 1);
    }

    #[test]
    fn fixed_seed_replays_identically() {
        let data = dataset();
        let run = || {
            let model = LayeredModel::random(6, &[5], Activation::Tanh, 0, 6).unwrap();
            let mask = StructureMask::full(&model);
            let (model, _, outcome) = run_ga_reg(
                model,
                mask,
                &data,
                options(30),
                &ga_options(5, 3),
                23,
                None,
            )
            .unwrap();
            (model, outcome.lambda_matrix, outcome.records)
        };
        let (m1, l1, r1) = run();
        let (m2, l2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn zero_vector_population_matches_basic_training() {
        let data = dataset();
        let zero_rows = vec![[0.0; REGULARIZER_COUNT]; 4];
        let mut ga = ga_options(4, 3);
        ga.ga.mutation_rate = 0.0;

        let model = LayeredModel::random(6, &[5], Activation::Relu, 0, 8).unwrap();
        let mask = StructureMask::full(&model);
        let (seq_model, _, outcome) = run_ga_reg(
            model.clone(),
            mask.clone(),
            &data,
            options(30),
            &ga,
            31,
            Some(&zero_rows),
        )
        .unwrap();
        assert!(outcome.lambda_matrix.is_unregularized());

        let mut basic = TrainingLoop::new(model, mask, &data, options(30), 31).unwrap();
        let spec = ScheduleSpec::new(ScheduleMode::Basic, 30, 2).unwrap();
        basic.run_schedule(&spec).unwrap();
        let (basic_model, _, basic_records) = basic.into_parts();
        assert_eq!(seq_model, basic_model);
        assert_eq!(outcome.records, basic_records);
    }

    #[test]
    fn degenerate_single_candidate_population() {
        // one candidate, no mutation: the result is that candidate iff it
        // beats the zero incumbent, otherwise the incumbent
        let data = dataset();
        let harmful = [1000.0, 0.0, 1000.0, 1000.0, 1000.0, 1000.0];
        let mut ga = ga_options(2, 2);
        ga.ga.mutation_rate = 0.0;
        ga.ga.crossover_rate = 0.0;
        ga.ga.elite_count = 0;

        let model = LayeredModel::random(6, &[5], Activation::Relu, 0, 9).unwrap();
        let mask = StructureMask::full(&model);
        let (_, _, outcome) = run_ga_reg(
            model,
            mask,
            &data,
            options(20),
            &ga,
            37,
            Some(&[harmful]),
        )
        .unwrap();
        // an extreme penalty cannot beat the unregularized baseline
        assert!(outcome.lambda_matrix.is_unregularized());
    }

    #[test]
    fn accepted_vector_never_loses_to_zero_baseline() {
        // the convex toy setting: population holds the zero vector and one
        // harmful vector, so the returned row's validation error is at most
        // the zero vector's at each decision
        let data = dataset();
        let rows = vec![[0.0; REGULARIZER_COUNT], [500.0; REGULARIZER_COUNT]];
        let mut ga = ga_options(2, 3);
        ga.ga.mutation_rate = 0.0;
        ga.ga.crossover_rate = 0.0;

        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 10).unwrap();
        let mask = StructureMask::full(&model);
        // the in-loop assertion enforces the invariant at every switch
        let result = run_ga_reg(model, mask, &data, options(20), &ga, 41, Some(&rows));
        assert!(result.is_ok());
    }

    #[test]
    fn t_below_layer_count_is_rejected() {
        let data = dataset();
        let model = LayeredModel::random(6, &[5, 4], Activation::Relu, 0, 3).unwrap();
        let mask = StructureMask::full(&model);
        let err = run_ga_reg(
            model,
            mask,
            &data,
            options(2),
            &ga_options(4, 2),
            1,
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
