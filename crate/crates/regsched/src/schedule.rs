//! Maps the training iteration number to the effective metaparameter matrix.
//!
//! Modes: `basic` (no regularization), `sequential` (live GA best, rows kept
//! current by the GA-REG driver), `cumulative`/`accumulated` (per-layer best
//! vectors, switched on as their segments start), `ordinal` (only the active
//! layer's vector), `static` (a full fixed matrix), and `expert`
//! (autoencoder pretraining followed by per-layer unit-weight regularizers).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizers::{LambdaMatrix, REGULARIZER_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Basic,
    Sequential,
    Cumulative,
    Static,
    Accumulated,
    Ordinal,
    Expert,
}

impl ScheduleMode {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::Basic => "basic",
            ScheduleMode::Sequential => "sequential",
            ScheduleMode::Cumulative => "cumulative",
            ScheduleMode::Static => "static",
            ScheduleMode::Accumulated => "accumulated",
            ScheduleMode::Ordinal => "ordinal",
            ScheduleMode::Expert => "expert",
        }
    }

    /// Modes whose layer vectors come from a GA-REG search.
    pub fn needs_ga_reg(self) -> bool {
        matches!(
            self,
            ScheduleMode::Sequential
                | ScheduleMode::Cumulative
                | ScheduleMode::Accumulated
                | ScheduleMode::Ordinal
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    /// Total scheduled training iterations T (expert pretraining excluded).
    pub total_iterations: usize,
    /// Number of weight layers k.
    pub layer_count: usize,
    /// Number of encoder layers s (expert mode).
    pub encoder_depth: usize,
    /// Autoencoder pretraining budget preceding iteration 0 (expert mode).
    pub pretrain_iterations: usize,
    /// Per-layer best vectors, filled by GA-REG or left at zero.
    layer_vectors: Vec<[f64; REGULARIZER_COUNT]>,
    /// Full matrix for static mode.
    pub static_matrix: Option<LambdaMatrix>,
}

impl ScheduleSpec {
    pub fn new(mode: ScheduleMode, total_iterations: usize, layer_count: usize) -> Result<Self> {
        if layer_count == 0 {
            return Err(Error::Config("layer count must be positive".to_string()));
        }
        if mode == ScheduleMode::Expert {
            return Err(Error::Config(
                "use ScheduleSpec::expert for expert mode".to_string(),
            ));
        }
        if total_iterations < layer_count {
            return Err(Error::Config(format!(
                "need at least one iteration per layer segment: T = {total_iterations} < k = {layer_count}"
            )));
        }
        Ok(ScheduleSpec {
            mode,
            total_iterations,
            layer_count,
            encoder_depth: 0,
            pretrain_iterations: 0,
            layer_vectors: vec![[0.0; REGULARIZER_COUNT]; layer_count],
            static_matrix: None,
        })
    }

    /// Expert schedule: a pretraining phase that trains the first
    /// `encoder_depth` layers as an autoencoder, then `total_iterations`
    /// split equally among the remaining layers, enabling each layer's full
    /// regularizer set at weight 1 as its segment starts. The default
    /// pretraining budget is one segment's worth of iterations.
    pub fn expert(
        layer_count: usize,
        encoder_depth: usize,
        total_iterations: usize,
    ) -> Result<Self> {
        if encoder_depth >= layer_count {
            return Err(Error::Config(format!(
                "encoder depth {encoder_depth} must be smaller than layer count {layer_count}"
            )));
        }
        let segments = layer_count - encoder_depth;
        if total_iterations < segments {
            return Err(Error::Config(format!(
                "need at least one iteration per segment: T = {total_iterations} < k - s = {segments}"
            )));
        }
        let pretrain_iterations = if encoder_depth > 0 {
            total_iterations / segments
        } else {
            0
        };
        Ok(ScheduleSpec {
            mode: ScheduleMode::Expert,
            total_iterations,
            layer_count,
            encoder_depth,
            pretrain_iterations,
            layer_vectors: vec![[0.0; REGULARIZER_COUNT]; layer_count],
            static_matrix: None,
        })
    }

    pub fn layer_vector(&self, layer: usize) -> &[f64; REGULARIZER_COUNT] {
        &self.layer_vectors[layer]
    }

    pub fn set_layer_vector(&mut self, layer: usize, vector: [f64; REGULARIZER_COUNT]) {
        self.layer_vectors[layer] = vector;
    }

    pub fn layer_vectors(&self) -> &[[f64; REGULARIZER_COUNT]] {
        &self.layer_vectors
    }

    /// Number of per-layer segments the iteration axis is split into.
    pub fn segment_count(&self) -> usize {
        if self.mode == ScheduleMode::Expert {
            self.layer_count - self.encoder_depth
        } else {
            self.layer_count
        }
    }

    /// Half-open iteration ranges, one per segment. Floor split with the
    /// remainder assigned to the last segment; together they cover [0, T)
    /// exactly once.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let n = self.segment_count();
        let base = self.total_iterations / n;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let start = i * base;
            let end = if i + 1 == n {
                self.total_iterations
            } else {
                (i + 1) * base
            };
            out.push((start, end));
        }
        out
    }

    /// 0-based index of the layer whose segment contains the iteration.
    pub fn active_layer(&self, iteration: usize) -> Result<usize> {
        if iteration >= self.total_iterations {
            return Err(Error::Range(format!(
                "iteration {iteration} outside schedule of {} iterations",
                self.total_iterations
            )));
        }
        let segment = self
            .segments()
            .iter()
            .position(|&(start, end)| iteration >= start && iteration < end)
            .expect("segments cover [0, T)");
        if self.mode == ScheduleMode::Expert {
            Ok(self.encoder_depth + segment)
        } else {
            Ok(segment)
        }
    }

    /// Metaparameters for the expert pretraining phase: reconstruction only.
    pub fn pretrain_lambda(&self) -> LambdaMatrix {
        let mut m = LambdaMatrix::zeros(self.layer_count);
        m.lambda_x = 1.0;
        m.lambda_y = 0.0;
        m
    }

    /// Effective metaparameter matrix at a scheduled iteration.
    pub fn resolve_lambda(&self, iteration: usize) -> Result<LambdaMatrix> {
        if iteration >= self.total_iterations {
            return Err(Error::Range(format!(
                "iteration {iteration} outside schedule of {} iterations",
                self.total_iterations
            )));
        }
        match self.mode {
            ScheduleMode::Basic => Ok(LambdaMatrix::zeros(self.layer_count)),
            ScheduleMode::Static => {
                let m = self.static_matrix.as_ref().ok_or_else(|| {
                    Error::Config("static mode requires a stored matrix".to_string())
                })?;
                Ok(m.clone())
            }
            ScheduleMode::Sequential | ScheduleMode::Cumulative | ScheduleMode::Accumulated => {
                let active = self.active_layer(iteration)?;
                let mut m = LambdaMatrix::zeros(self.layer_count);
                for layer in 0..=active {
                    m.set_row(layer, self.layer_vectors[layer]);
                }
                Ok(m)
            }
            ScheduleMode::Ordinal => {
                let active = self.active_layer(iteration)?;
                let mut m = LambdaMatrix::zeros(self.layer_count);
                m.set_row(active, self.layer_vectors[active]);
                Ok(m)
            }
            ScheduleMode::Expert => {
                let active = self.active_layer(iteration)?;
                let mut m = LambdaMatrix::zeros(self.layer_count);
                for layer in self.encoder_depth..=active {
                    m.set_row(layer, [1.0; REGULARIZER_COUNT]);
                }
                Ok(m)
            }
        }
    }
}
