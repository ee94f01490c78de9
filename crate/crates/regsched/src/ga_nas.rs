//! Structure pruning: a genetic search over binary neuron masks that trades
//! validation error against active parameter count, tracing a trajectory
//! through complexity/robustness/error space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::{derive_seed, Evolution, GaConfig, Genome};
use crate::metrics::{self, RunRecord};
use crate::model::{predict, LayeredModel, StructureMask};

/// Stream tag for the initial-population RNG.
const STREAM_INIT: u64 = 30;
const STREAM_ENGINE: u64 = 31;

/// Per-hidden-layer bit vectors marking each neuron alive (true) or pruned.
/// Expansion zeroes a pruned neuron's incoming column and outgoing row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronMask {
    layers: Vec<Vec<bool>>,
}

impl NeuronMask {
    /// All neurons alive, matching the model's hidden widths.
    pub fn full(model: &LayeredModel) -> Self {
        NeuronMask {
            layers: model.hidden_widths().iter().map(|&w| vec![true; w]).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Vec<bool>>) -> Self {
        NeuronMask { layers }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    /// Total number of prunable neurons.
    pub fn bit_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn alive_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn has_dead_layer(&self) -> bool {
        self.layers.iter().any(|l| l.iter().all(|&b| !b))
    }

    /// Hidden layers that still contain at least one alive neuron.
    pub fn alive_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.iter().any(|&b| b))
            .count()
    }

    pub fn to_genome(&self) -> Genome {
        Genome::Bits(self.layers.concat())
    }

    /// Rebuild from a flat genome using the model's hidden widths.
    pub fn from_genome(model: &LayeredModel, genome: &Genome) -> Result<Self> {
        let bits = match genome {
            Genome::Bits(b) => b,
            Genome::Real(_) => {
                return Err(Error::Genome(
                    "neuron masks are binary genomes".to_string(),
                ))
            }
        };
        let widths = model.hidden_widths();
        let total: usize = widths.iter().sum();
        if bits.len() != total {
            return Err(Error::Genome(format!(
                "genome length {} does not match {} prunable neurons",
                bits.len(),
                total
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut cursor = 0;
        for w in widths {
            layers.push(bits[cursor..cursor + w].to_vec());
            cursor += w;
        }
        Ok(NeuronMask { layers })
    }

    /// Expand to a per-weight structure mask: pruning hidden neuron q of
    /// layer i zeroes column q of the layer-i mask and row q of the
    /// layer-(i+1) mask.
    pub fn expand(&self, model: &LayeredModel) -> Result<StructureMask> {
        if self.layers.len() + 1 != model.depth() {
            return Err(Error::Dimension(format!(
                "neuron mask covers {} hidden layers, model has {}",
                self.layers.len(),
                model.depth() - 1
            )));
        }
        let mut mask = StructureMask::full(model);
        for (i, bits) in self.layers.iter().enumerate() {
            if bits.len() != model.layers()[i].weights.cols() {
                return Err(Error::Dimension(format!(
                    "hidden layer {i}: {} bits for width {}",
                    bits.len(),
                    model.layers()[i].weights.cols()
                )));
            }
            for (q, &alive) in bits.iter().enumerate() {
                if alive {
                    continue;
                }
                let incoming = mask.layer_mut(i);
                for p in 0..incoming.rows() {
                    incoming.set(p, q, 0.0);
                }
                let outgoing = mask.layer_mut(i + 1);
                for c in 0..outgoing.cols() {
                    outgoing.set(q, c, 0.0);
                }
            }
        }
        Ok(mask)
    }
}

/// Number of active parameters: the count of 1-entries across the mask.
pub fn complexity(mask: &StructureMask) -> usize {
    mask.active_count()
}

/// Fitness of a neuron mask on frozen weights: validation MAE under the
/// expanded mask plus `mu` times the active-parameter fraction, plus an
/// optional layer-count term. Masks with a fully dead layer score infinity.
pub fn fitness(
    neuron_mask: &NeuronMask,
    model: &LayeredModel,
    data: &Dataset,
    mu: f64,
    lambda_layers: f64,
) -> f64 {
    if neuron_mask.has_dead_layer() {
        return f64::INFINITY;
    }
    let mask = match neuron_mask.expand(model) {
        Ok(m) => m,
        Err(_) => return f64::INFINITY,
    };
    let val = &data.splits.val;
    let inputs = data.inputs(val);
    let predictions = match predict(model, &mask, &inputs) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    let val_mae = match metrics::mae(&predictions, &data.targets_at(val)) {
        Ok(m) if m.is_finite() => m,
        _ => return f64::INFINITY,
    };
    let total = model.weight_count() as f64;
    let mut score = val_mae + mu * complexity(&mask) as f64 / total;
    if lambda_layers > 0.0 {
        score += lambda_layers * neuron_mask.alive_layer_count() as f64;
    }
    score
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneOptions {
    pub ga: GaConfig,
    /// Complexity pressure in the fitness.
    pub mu: f64,
    /// Probability of dropping each bit when sampling the initial
    /// population around the all-ones mask.
    pub drop_probability: f64,
    /// Layer-count penalty weight entering the fitness.
    pub lambda_layers: f64,
    /// Window for the trajectory robustness column.
    pub robustness_window: usize,
}

impl Default for PruneOptions {
    fn default() -> Self {
        PruneOptions {
            ga: GaConfig::default(),
            mu: 0.05,
            drop_probability: 0.1,
            lambda_layers: 0.0,
            robustness_window: 10,
        }
    }
}

/// Evolve neuron masks on the trained model's frozen weights. Returns the
/// best mask found and one trajectory record per scored generation
/// (generation 0 is the initial population).
pub fn prune(
    model: &LayeredModel,
    data: &Dataset,
    opts: &PruneOptions,
) -> Result<(NeuronMask, Vec<RunRecord>)> {
    if data.splits.val.is_empty() {
        return Err(Error::Config("validation split is empty".to_string()));
    }
    if opts.mu < 0.0 {
        return Err(Error::Config(format!(
            "mu must be non-negative, got {}",
            opts.mu
        )));
    }
    let template = NeuronMask::full(model);
    if template.bit_count() == 0 {
        return Err(Error::Config(
            "model has no prunable hidden neurons".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.ga.rng_seed, &[STREAM_INIT]));
    let initial: Vec<Genome> = (0..opts.ga.population_size.max(1))
        .map(|_| {
            Genome::Bits(
                (0..template.bit_count())
                    .map(|_| !rng.gen_bool(opts.drop_probability))
                    .collect(),
            )
        })
        .collect();

    let score = |genome: &Genome| match NeuronMask::from_genome(model, genome) {
        Ok(nm) => fitness(&nm, model, data, opts.mu, opts.lambda_layers),
        Err(_) => f64::INFINITY,
    };

    let mut engine = Evolution::new(GaConfig {
        rng_seed: derive_seed(opts.ga.rng_seed, &[STREAM_ENGINE]),
        ..opts.ga
    });
    let mut trajectory = Vec::new();
    let mut best_history: Vec<f64> = Vec::new();
    let parameter_variance = metrics::parameter_variance(model);
    let (best_genome, _) = engine.run(initial, score, |generation, population, scores| {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.total_cmp(&scores[best]).is_lt() {
                best = i;
            }
        }
        let record = match NeuronMask::from_genome(model, &population[best]) {
            Ok(nm) if !nm.has_dead_layer() => {
                let mask = nm.expand(model).expect("expandable mask");
                let inputs = data.inputs(&data.splits.val);
                let val_mae = predict(model, &mask, &inputs)
                    .and_then(|p| metrics::mae(&p, &data.targets_at(&data.splits.val)))
                    .unwrap_or(f64::INFINITY);
                best_history.push(scores[best]);
                RunRecord {
                    iteration: generation,
                    train_s: scores[best],
                    val_mae,
                    complexity: complexity(&mask),
                    robustness: metrics::robustness(&best_history, opts.robustness_window),
                    parameter_variance,
                }
            }
            _ => {
                best_history.push(scores[best]);
                RunRecord {
                    iteration: generation,
                    train_s: scores[best],
                    val_mae: f64::INFINITY,
                    complexity: 0,
                    robustness: None,
                    parameter_variance,
                }
            }
        };
        trajectory.push(record);
    })?;
    let best_mask = NeuronMask::from_genome(model, &best_genome)?;
    if best_mask.has_dead_layer() {
        return Err(Error::Runtime(
            "pruning search found no mask without dead layers".to_string(),
        ));
    }
    Ok((best_mask, trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_math::Matrix;
    use crate::model::{forward, Activation};

    fn dataset() -> Dataset {
        Dataset::synthesize(300, 6, 5).unwrap()
    }

    #[test]
    fn complexity_counts_ones() {
        let model = LayeredModel::random(2, &[3], Activation::Relu, 0, 1).unwrap();
        let full = StructureMask::full(&model);
        // 2x3 + 3x1
        assert_eq!(complexity(&full), 9);

        let zeros = StructureMask::from_matrices(vec![Matrix::zeros(2, 3), Matrix::zeros(3, 1)])
            .unwrap();
        assert_eq!(complexity(&zeros), 0);

        let mut mixed = StructureMask::full(&model);
        for (p, q) in [(0, 0), (0, 1), (1, 0), (1, 2), (0, 2)] {
            mixed.layer_mut(0).set(p, q, 0.0);
        }
        assert_eq!(complexity(&mixed), 4);
    }

    #[test]
    fn full_mask_complexity_equals_weight_count() {
        let model = LayeredModel::random(6, &[5, 4], Activation::Tanh, 0, 2).unwrap();
        let nm = NeuronMask::full(&model);
        let expanded = nm.expand(&model).unwrap();
        assert_eq!(complexity(&expanded), model.weight_count());
    }

    #[test]
    fn expansion_zeroes_column_and_row() {
        let model = LayeredModel::random(4, &[3, 2], Activation::Relu, 0, 3).unwrap();
        let mut layers = NeuronMask::full(&model).layers().to_vec();
        layers[0][1] = false;
        let nm = NeuronMask::from_layers(layers);
        let mask = nm.expand(&model).unwrap();
        for p in 0..4 {
            assert_eq!(mask.layer(0).get(p, 1), 0.0);
        }
        for c in 0..2 {
            assert_eq!(mask.layer(1).get(1, c), 0.0);
        }
        mask.validate_alive().unwrap();
    }

    #[test]
    fn pruning_zero_output_neuron_preserves_forward() {
        let mut model = LayeredModel::random(4, &[3], Activation::Relu, 0, 4).unwrap();
        // neuron 2's outgoing weights exactly zero
        model.layers_mut()[1].weights.set(2, 0, 0.0);
        let mut layers = NeuronMask::full(&model).layers().to_vec();
        layers[0][2] = false;
        let nm = NeuronMask::from_layers(layers);
        let pruned = nm.expand(&model).unwrap();
        let full = StructureMask::full(&model);
        let x = [0.4, -0.3, 0.8, 0.1];
        assert_eq!(
            forward(&model, &full, &x).unwrap(),
            forward(&model, &pruned, &x).unwrap()
        );
    }

    #[test]
    fn fitness_with_zero_mu_is_validation_mae() {
        let data = dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 6).unwrap();
        let nm = NeuronMask::full(&model);
        let mask = nm.expand(&model).unwrap();
        let inputs = data.inputs(&data.splits.val);
        let predictions = predict(&model, &mask, &inputs).unwrap();
        let val_mae = metrics::mae(&predictions, &data.targets_at(&data.splits.val)).unwrap();
        assert_eq!(fitness(&nm, &model, &data, 0.0, 0.0), val_mae);
    }

    #[test]
    fn dead_layer_mask_scores_infinity() {
        let data = dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 7).unwrap();
        let nm = NeuronMask::from_layers(vec![vec![false; 4]]);
        assert!(fitness(&nm, &model, &data, 0.0, 0.0).is_infinite());
    }

    #[test]
    fn genome_round_trip() {
        let model = LayeredModel::random(5, &[4, 3], Activation::Relu, 0, 8).unwrap();
        let mut layers = NeuronMask::full(&model).layers().to_vec();
        layers[0][2] = false;
        layers[1][0] = false;
        let nm = NeuronMask::from_layers(layers);
        let back = NeuronMask::from_genome(&model, &nm.to_genome()).unwrap();
        assert_eq!(nm, back);
    }

    #[test]
    fn prune_drops_a_dead_neuron() {
        // a hidden neuron whose outgoing weights were trained to zero is
        // free complexity: the mu term prunes it without hurting MAE. The
        // model is trained first so the remaining neurons carry signal.
        let data = dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 9).unwrap();
        let mask = StructureMask::full(&model);
        let opts = crate::trainer::TrainOptions {
            iterations: 300,
            learning_rate: 1e-3,
            batch_size: 16,
            record_every: 50,
            robustness_window: 10,
        };
        let mut training =
            crate::trainer::TrainingLoop::new(model, mask, &data, opts, 1).unwrap();
        let spec = crate::schedule::ScheduleSpec::new(
            crate::schedule::ScheduleMode::Basic,
            300,
            2,
        )
        .unwrap();
        training.run_schedule(&spec).unwrap();
        let (mut model, _, _) = training.into_parts();
        model.layers_mut()[1].weights.set(3, 0, 0.0);

        let opts = PruneOptions {
            ga: GaConfig {
                population_size: 16,
                generations: 20,
                rng_seed: 10,
                ..GaConfig::default()
            },
            mu: 0.05,
            ..PruneOptions::default()
        };
        let (best, trajectory) = prune(&model, &data, &opts).unwrap();
        assert!(!best.layers()[0][3], "zero-output neuron was kept");
        // fitness oracle: re-enabling the dead neuron strictly worsens
        // fitness while leaving MAE unchanged
        let mut relaxed = best.layers().to_vec();
        relaxed[0][3] = true;
        let with_neuron = NeuronMask::from_layers(relaxed);
        let f_best = fitness(&best, &model, &data, 0.05, 0.0);
        let f_with = fitness(&with_neuron, &model, &data, 0.05, 0.0);
        assert!(f_best < f_with);
        assert_eq!(trajectory.len(), opts.ga.generations + 1);
    }

    #[test]
    fn prune_with_zero_generations_returns_best_initial() {
        let data = dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 11).unwrap();
        let opts = PruneOptions {
            ga: GaConfig {
                population_size: 8,
                generations: 0,
                rng_seed: 12,
                ..GaConfig::default()
            },
            mu: 0.0,
            ..PruneOptions::default()
        };
        let (_, trajectory) = prune(&model, &data, &opts).unwrap();
        assert_eq!(trajectory.len(), 1);
    }

    #[test]
    fn prune_replays_deterministically() {
        let data = dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 13).unwrap();
        let opts = PruneOptions {
            ga: GaConfig {
                population_size: 10,
                generations: 8,
                rng_seed: 14,
                ..GaConfig::default()
            },
            ..PruneOptions::default()
        };
        let a = prune(&model, &data, &opts).unwrap();
        let b = prune(&model, &data, &opts).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn ga_matches_brute_force_on_tiny_model() {
        // exhaustive enumeration over all masks of 6 prunable neurons
        let data = Dataset::synthesize(200, 6, 15).unwrap();
        let model = LayeredModel::random(6, &[3, 3], Activation::Relu, 0, 16).unwrap();
        let bits = NeuronMask::full(&model).bit_count();
        assert_eq!(bits, 6);
        let mut best_exhaustive = f64::INFINITY;
        for code in 0u32..(1 << bits) {
            let genome = Genome::Bits((0..bits).map(|b| code & (1 << b) != 0).collect());
            let nm = NeuronMask::from_genome(&model, &genome).unwrap();
            let f = fitness(&nm, &model, &data, 0.05, 0.0);
            if f < best_exhaustive {
                best_exhaustive = f;
            }
        }
        let opts = PruneOptions {
            ga: GaConfig {
                population_size: 20,
                generations: 30,
                rng_seed: 17,
                ..GaConfig::default()
            },
            mu: 0.05,
            ..PruneOptions::default()
        };
        let (best, _) = prune(&model, &data, &opts).unwrap();
        let ga_fitness = fitness(&best, &model, &data, 0.05, 0.0);
        assert!(
            ga_fitness <= best_exhaustive * 1.05,
            "GA {ga_fitness} vs exhaustive {best_exhaustive}"
        );
    }
}
