//! The mini-batch gradient-descent loop shared by direct schedule training
//! and the GA-REG driver. One `TrainingLoop` owns the model, the mask, the
//! batch stream and the record log; callers feed it a metaparameter matrix
//! per iteration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::derive_seed;
use crate::metrics::{self, RunRecord};
use crate::model::{
    backward, predict, sgd_step, LayeredModel, Sample, StructureMask,
};
use crate::regularizers::{composite_loss, LambdaMatrix, RegKind, Regularizer, REGULARIZER_COUNT};
use crate::schedule::{ScheduleMode, ScheduleSpec};

/// Stream tag for the batch-sampling RNG.
const STREAM_BATCHES: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Record a RunRecord every this many iterations.
    pub record_every: usize,
    /// Window for the variance-of-loss robustness metric.
    pub robustness_window: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iterations: 1000,
            learning_rate: 1e-2,
            batch_size: 32,
            record_every: 1,
            robustness_window: 50,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".to_string()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        if self.batch_size > train_len {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the train split size {train_len}",
                self.batch_size
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".to_string()));
        }
        if self.robustness_window < 2 {
            return Err(Error::Config(
                "robustness_window must be at least 2".to_string(),
            ));
        }
        Ok(())
    }
}

pub struct TrainingLoop<'a> {
    model: LayeredModel,
    mask: StructureMask,
    data: &'a Dataset,
    opts: TrainOptions,
    batch_rng: ChaCha8Rng,
    epoch_order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    records: Vec<RunRecord>,
    val_loss_history: Vec<f64>,
}

impl<'a> TrainingLoop<'a> {
    pub fn new(
        model: LayeredModel,
        mask: StructureMask,
        data: &'a Dataset,
        opts: TrainOptions,
        seed: u64,
    ) -> Result<Self> {
        mask.matches(&model)?;
        opts.validate(data.splits.train.len())?;
        if data.splits.val.is_empty() {
            return Err(Error::Config("validation split is empty".to_string()));
        }
        Ok(TrainingLoop {
            model,
            mask,
            data,
            opts,
            batch_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_BATCHES])),
            epoch_order: Vec::new(),
            cursor: 0,
            iteration: 0,
            records: Vec::new(),
            val_loss_history: Vec::new(),
        })
    }

    pub fn model(&self) -> &LayeredModel {
        &self.model
    }

    pub fn mask(&self) -> &StructureMask {
        &self.mask
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn options(&self) -> &TrainOptions {
        &self.opts
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn into_parts(self) -> (LayeredModel, StructureMask, Vec<RunRecord>) {
        (self.model, self.mask, self.records)
    }

    fn next_batch_indices(&mut self) -> Vec<usize> {
        let train = &self.data.splits.train;
        if self.cursor + self.opts.batch_size > self.epoch_order.len() {
            self.epoch_order = train.clone();
            self.epoch_order.shuffle(&mut self.batch_rng);
            self.cursor = 0;
        }
        let batch = self.epoch_order[self.cursor..self.cursor + self.opts.batch_size].to_vec();
        self.cursor += self.opts.batch_size;
        batch
    }

    /// One scheduled iteration: draw a batch, take a gradient step under the
    /// given metaparameters, then append a record when due.
    pub fn step(&mut self, lambdas: &LambdaMatrix) -> Result<()> {
        let indices = self.next_batch_indices();
        let batch = self.data.batch(&indices);
        let grad = backward(&self.model, &self.mask, &batch, lambdas)?;
        sgd_step(&mut self.model, &self.mask, &grad, self.opts.learning_rate)?;

        let t = self.iteration;
        self.iteration += 1;
        if t % self.opts.record_every == 0 || t + 1 == self.opts.iterations {
            self.record(t, &batch, lambdas)?;
        }
        Ok(())
    }

    /// A training step that is not part of the scheduled iteration axis
    /// (autoencoder pretraining, post-prune fine tuning): no records.
    pub fn auxiliary_step(&mut self, lambdas: &LambdaMatrix) -> Result<()> {
        let indices = self.next_batch_indices();
        let batch = self.data.batch(&indices);
        let grad = backward(&self.model, &self.mask, &batch, lambdas)?;
        sgd_step(&mut self.model, &self.mask, &grad, self.opts.learning_rate)
    }

    fn record(&mut self, iteration: usize, batch: &[Sample], lambdas: &LambdaMatrix) -> Result<()> {
        let train_s = composite_loss(&self.model, &self.mask, batch, lambdas)?.total;
        if !train_s.is_finite() {
            return Err(Error::Runtime(format!(
                "training diverged at iteration {iteration}; reduce the learning rate"
            )));
        }
        let val = &self.data.splits.val;
        let inputs = self.data.inputs(val);
        let predictions = predict(&self.model, &self.mask, &inputs)?;
        let targets = self.data.targets_at(val);
        let val_mae = metrics::mae(&predictions, &targets)?;
        let val_loss = self.validation_loss(&predictions, &targets, lambdas)?;
        self.val_loss_history.push(val_loss);
        self.records.push(RunRecord {
            iteration,
            train_s,
            val_mae,
            complexity: self.mask.active_count(),
            robustness: metrics::robustness(&self.val_loss_history, self.opts.robustness_window),
            parameter_variance: metrics::parameter_variance(&self.model),
        });
        Ok(())
    }

    /// Composite loss on the validation split, reusing already-computed
    /// predictions for the approximation term.
    fn validation_loss(
        &self,
        predictions: &[f64],
        targets: &[f64],
        lambdas: &LambdaMatrix,
    ) -> Result<f64> {
        let mut e_y = 0.0;
        for (p, t) in predictions.iter().zip(targets) {
            let d = t - p;
            e_y += d * d;
        }
        let mut total = lambdas.lambda_y * e_y;
        if lambdas.lambda_x > 0.0 && self.model.autoencoder().is_some() {
            let mut e_x = 0.0;
            for &i in &self.data.splits.val {
                let x = self.data.feature_row(i);
                let r = crate::model::reconstruct_masked(&self.model, &self.mask, x)?;
                for (xi, ri) in x.iter().zip(r.as_slice()) {
                    let d = xi - ri;
                    e_x += d * d;
                }
            }
            total += lambdas.lambda_x * e_x;
        }
        let k = self.model.depth();
        for i in 0..k {
            for j in 0..REGULARIZER_COUNT {
                let weight = lambdas.get(i, j);
                if weight == 0.0 {
                    continue;
                }
                let masked =
                    crate::core_math::hadamard(&self.model.layers()[i].weights, self.mask.layer(i))?;
                let value = crate::regularizers::reg_value(
                    &Regularizer::plain(RegKind::from_index(j)),
                    &masked,
                    k,
                )?;
                total += weight * value;
            }
        }
        Ok(total)
    }

    /// Validation MAE of the current model state.
    pub fn validation_mae(&self) -> Result<f64> {
        let val = &self.data.splits.val;
        let inputs = self.data.inputs(val);
        let predictions = predict(&self.model, &self.mask, &inputs)?;
        metrics::mae(&predictions, &self.data.targets_at(val))
    }

    /// Test MAE of the current model state.
    pub fn test_mae(&self) -> Result<f64> {
        let test = &self.data.splits.test;
        let inputs = self.data.inputs(test);
        let predictions = predict(&self.model, &self.mask, &inputs)?;
        metrics::mae(&predictions, &self.data.targets_at(test))
    }

    /// Drive the whole schedule: the expert pretraining phase when one is
    /// configured, then `total_iterations` scheduled steps.
    pub fn run_schedule(&mut self, spec: &ScheduleSpec) -> Result<()> {
        if spec.layer_count != self.model.depth() {
            return Err(Error::Config(format!(
                "schedule is for {} layers, model has {}",
                spec.layer_count,
                self.model.depth()
            )));
        }
        if spec.total_iterations != self.opts.iterations {
            return Err(Error::Config(format!(
                "schedule covers {} iterations, options say {}",
                spec.total_iterations, self.opts.iterations
            )));
        }
        if spec.mode == ScheduleMode::Expert && spec.encoder_depth > 0 {
            if self.model.autoencoder().is_none() {
                return Err(Error::Config(
                    "expert schedule with encoder layers requires an autoencoder head".to_string(),
                ));
            }
            let pretrain = spec.pretrain_lambda();
            for _ in 0..spec.pretrain_iterations {
                self.auxiliary_step(&pretrain)?;
            }
        }
        for t in 0..spec.total_iterations {
            let lambdas = spec.resolve_lambda(t)?;
            self.step(&lambdas)?;
        }
        Ok(())
    }

    /// Replace the mask (used after pruning) and keep training.
    pub fn set_mask(&mut self, mask: StructureMask) -> Result<()> {
        mask.matches(&self.model)?;
        self.mask = mask;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::schedule::ScheduleMode;

    fn small_dataset() -> Dataset {
        Dataset::synthesize(300, 6, 9).unwrap()
    }

    fn small_options(iterations: usize) -> TrainOptions {
        TrainOptions {
            iterations,
            learning_rate: 1e-3,
            batch_size: 16,
            record_every: 1,
            robustness_window: 10,
        }
    }

    #[test]
    fn basic_training_reduces_validation_error() {
        let data = small_dataset();
        let model = LayeredModel::random(6, &[8], Activation::Relu, 0, 1).unwrap();
        let mask = StructureMask::full(&model);
        let mut training =
            TrainingLoop::new(model, mask, &data, small_options(200), 1).unwrap();
        let before = training.validation_mae().unwrap();
        let spec = ScheduleSpec::new(ScheduleMode::Basic, 200, 2).unwrap();
        training.run_schedule(&spec).unwrap();
        let after = training.validation_mae().unwrap();
        assert!(after < before, "validation MAE {before} -> {after}");
        assert_eq!(training.records().len(), 200);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_dataset();
        let run = || {
            let model = LayeredModel::random(6, &[5], Activation::Tanh, 0, 3).unwrap();
            let mask = StructureMask::full(&model);
            let mut training =
                TrainingLoop::new(model, mask, &data, small_options(50), 7).unwrap();
            let spec = ScheduleSpec::new(ScheduleMode::Basic, 50, 2).unwrap();
            training.run_schedule(&spec).unwrap();
            let (model, _, records) = training.into_parts();
            (model, records)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn divergence_is_reported() {
        let data = small_dataset();
        let model = LayeredModel::random(6, &[8], Activation::Relu, 0, 1).unwrap();
        let mask = StructureMask::full(&model);
        let mut opts = small_options(400);
        opts.learning_rate = 10.0;
        let mut training = TrainingLoop::new(model, mask, &data, opts, 1).unwrap();
        let spec = ScheduleSpec::new(ScheduleMode::Basic, 400, 2).unwrap();
        let err = training.run_schedule(&spec);
        assert!(matches!(err, Err(Error::Runtime(_))));
    }

    #[test]
    fn masked_entries_stay_at_initial_values() {
        let data = small_dataset();
        let model = LayeredModel::random(6, &[6], Activation::Relu, 0, 5).unwrap();
        let mut mask = StructureMask::full(&model);
        mask.layer_mut(0).set(1, 2, 0.0);
        mask.layer_mut(0).set(3, 0, 0.0);
        mask.layer_mut(1).set(4, 0, 0.0);
        let frozen = [
            model.layers()[0].weights.get(1, 2),
            model.layers()[0].weights.get(3, 0),
            model.layers()[1].weights.get(4, 0),
        ];
        let mut training =
            TrainingLoop::new(model, mask, &data, small_options(100), 2).unwrap();
        let spec = ScheduleSpec::new(ScheduleMode::Basic, 100, 2).unwrap();
        training.run_schedule(&spec).unwrap();
        let (model, _, _) = training.into_parts();
        assert_eq!(model.layers()[0].weights.get(1, 2), frozen[0]);
        assert_eq!(model.layers()[0].weights.get(3, 0), frozen[1]);
        assert_eq!(model.layers()[1].weights.get(4, 0), frozen[2]);
    }

    #[test]
    fn expert_schedule_runs_pretraining() {
        let data = small_dataset();
        let model = LayeredModel::random(6, &[5, 4], Activation::Tanh, 1, 4).unwrap();
        let mask = StructureMask::full(&model);
        let mut training =
            TrainingLoop::new(model, mask, &data, small_options(60), 3).unwrap();
        let spec = ScheduleSpec::expert(3, 1, 60).unwrap();
        assert!(spec.pretrain_iterations > 0);
        training.run_schedule(&spec).unwrap();
        assert_eq!(training.records().len(), 60);
    }

    #[test]
    fn batch_size_larger_than_train_split_is_rejected() {
        let data = small_dataset();
        let model = LayeredModel::random(6, &[4], Activation::Relu, 0, 1).unwrap();
        let mask = StructureMask::full(&model);
        let mut opts = small_options(10);
        opts.batch_size = 10_000;
        assert!(TrainingLoop::new(model, mask, &data, opts, 1).is_err());
    }
}
