//! Accuracy, robustness and complexity metrics, plus the per-iteration run
//! record streamed to JSONL during training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, reconstruct, LayeredModel, Sample, StructureMask};

/// Mean absolute difference between predictions and targets.
pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::Size(format!(
            "mae needs equal nonempty inputs, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Sum of squared prediction residuals over a batch.
pub fn e_y(model: &LayeredModel, mask: &StructureMask, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Size("e_y: empty batch".to_string()));
    }
    let mut total = 0.0;
    for &(x, y) in batch {
        let f = forward(model, mask, x)?;
        let d = y - f;
        total += d * d;
    }
    Ok(total)
}

/// Sum of squared reconstruction residuals over a batch.
pub fn e_x(model: &LayeredModel, inputs: &[&[f64]]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Size("e_x: empty batch".to_string()));
    }
    let mut total = 0.0;
    for &x in inputs {
        let r = reconstruct(model, x)?;
        for (xi, ri) in x.iter().zip(r.as_slice()) {
            let d = xi - ri;
            total += d * d;
        }
    }
    Ok(total)
}

/// Sample variance (n-1 denominator) of the last `window` loss values.
/// Returns `None` until enough history exists.
pub fn robustness(history: &[f64], window: usize) -> Option<f64> {
    assert!(window >= 2, "robustness window must be at least 2");
    if history.len() < window {
        return None;
    }
    Some(sample_variance(&history[history.len() - window..]))
}

/// Sample variance of all weight-matrix entries of the model (biases and
/// the decoder head excluded).
pub fn parameter_variance(model: &LayeredModel) -> f64 {
    let values: Vec<f64> = model
        .layers()
        .iter()
        .flat_map(|l| l.weights.data().iter().copied())
        .collect();
    if values.len() < 2 {
        return 0.0;
    }
    sample_variance(&values)
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// One training-iteration snapshot of the complexity/robustness/error state.
/// Serialized one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: usize,
    #[serde(rename = "train_S")]
    pub train_s: f64,
    #[serde(rename = "val_MAE")]
    pub val_mae: f64,
    pub complexity: usize,
    pub robustness: Option<f64>,
    pub parameter_variance: f64,
}
