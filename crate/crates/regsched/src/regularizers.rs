//! The additive regularizer catalog: per-layer penalty values, their
//! analytic gradients, and assembly of the composite loss
//! `S = lambda_x * Ex + lambda_y * Ey + sum_ij lambda[i][j] * R[i][j]`.

use serde::{Deserialize, Serialize};

use crate::core_math::{difference_operator, frobenius, smoothing_operator, Matrix, Vector};
use crate::error::{Error, Result};
use crate::model::{forward, reconstruct_masked, LayeredModel, Sample, StructureMask};

/// Number of regularizer kinds; fixes the column count of [`LambdaMatrix`].
pub const REGULARIZER_COUNT: usize = 6;

/// The fixed catalog. The ordering defines the column order of
/// [`LambdaMatrix`] and the canonical config names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    /// L1 distance from the reference point.
    Lasso,
    /// Constant penalty equal to the layer count.
    Layers,
    /// Frobenius distance of W W^T from the identity.
    Orthogonal,
    /// Squared L2 distance from the reference point.
    Ridge,
    /// Frobenius norm of (I - A) W with the banded smoothing operator A.
    #[serde(rename = "highfreq")]
    HighFreq,
    /// Frobenius norm of B W with the banded difference operator B.
    #[serde(rename = "localdiff")]
    LocalDiff,
}

pub const ALL_KINDS: [RegKind; REGULARIZER_COUNT] = [
    RegKind::Lasso,
    RegKind::Layers,
    RegKind::Orthogonal,
    RegKind::Ridge,
    RegKind::HighFreq,
    RegKind::LocalDiff,
];

impl RegKind {
    pub fn index(self) -> usize {
        match self {
            RegKind::Lasso => 0,
            RegKind::Layers => 1,
            RegKind::Orthogonal => 2,
            RegKind::Ridge => 3,
            RegKind::HighFreq => 4,
            RegKind::LocalDiff => 5,
        }
    }

    pub fn from_index(i: usize) -> RegKind {
        ALL_KINDS[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            RegKind::Lasso => "lasso",
            RegKind::Layers => "layers",
            RegKind::Orthogonal => "orthogonal",
            RegKind::Ridge => "ridge",
            RegKind::HighFreq => "highfreq",
            RegKind::LocalDiff => "localdiff",
        }
    }

    pub fn from_name(name: &str) -> Result<RegKind> {
        ALL_KINDS
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown regularizer name \"{name}\"")))
    }
}

/// A regularizer instance: the kind plus an optional reference point for the
/// lasso/ridge distance (defaults to the zero vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub kind: RegKind,
    pub reference: Option<Vector>,
}

impl Regularizer {
    pub fn plain(kind: RegKind) -> Self {
        Regularizer {
            kind,
            reference: None,
        }
    }

    pub fn with_reference(kind: RegKind, reference: Vector) -> Self {
        Regularizer {
            kind,
            reference: Some(reference),
        }
    }

    fn reference_at(&self, i: usize) -> f64 {
        self.reference.as_ref().map_or(0.0, |w0| w0.get(i))
    }

    fn check_reference(&self, len: usize) -> Result<()> {
        if let Some(w0) = &self.reference {
            if w0.len() != len {
                return Err(Error::Dimension(format!(
                    "reference point length {} does not match vec(W) length {len}",
                    w0.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_operator_dim(kind: RegKind, w: &Matrix) -> Result<()> {
    if w.rows() < 3 {
        return Err(Error::Dimension(format!(
            "{} needs at least 3 weight rows, got {}",
            kind.name(),
            w.rows()
        )));
    }
    Ok(())
}

/// Value of one regularizer on a weight matrix. `layer_count` only feeds the
/// layer-count penalty.
pub fn reg_value(reg: &Regularizer, w: &Matrix, layer_count: usize) -> Result<f64> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::Dimension("empty weight matrix".to_string()));
    }
    match reg.kind {
        RegKind::Lasso => {
            reg.check_reference(w.data().len())?;
            Ok(w.data()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - reg.reference_at(i)).abs())
                .sum())
        }
        RegKind::Layers => Ok(layer_count as f64),
        RegKind::Orthogonal => {
            let gram = w.matmul(&w.transpose())?;
            let diff = gram.sub(&Matrix::identity(w.rows()))?;
            Ok(frobenius(&diff))
        }
        RegKind::Ridge => {
            reg.check_reference(w.data().len())?;
            Ok(w.data()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let d = v - reg.reference_at(i);
                    d * d
                })
                .sum())
        }
        RegKind::HighFreq => {
            check_operator_dim(reg.kind, w)?;
            let a = smoothing_operator(w.rows())?;
            let op = Matrix::identity(w.rows()).sub(&a)?;
            Ok(frobenius(&op.matmul(w)?))
        }
        RegKind::LocalDiff => {
            check_operator_dim(reg.kind, w)?;
            let b = difference_operator(w.rows())?;
            Ok(frobenius(&b.matmul(w)?))
        }
    }
}

/// Analytic gradient of [`reg_value`] with respect to W. The layer-count
/// penalty is constant in W, so its gradient is zero; the L1 subgradient
/// uses sign(0) = 0; Frobenius-norm gradients fall back to zero exactly at
/// the (non-differentiable) zero of the norm.
pub fn reg_grad(reg: &Regularizer, w: &Matrix, layer_count: usize) -> Result<Matrix> {
    let _ = layer_count;
    match reg.kind {
        RegKind::Lasso => {
            reg.check_reference(w.data().len())?;
            let mut g = Matrix::zeros(w.rows(), w.cols());
            for (i, v) in w.data().iter().enumerate() {
                let d = v - reg.reference_at(i);
                g.data_mut()[i] = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            Ok(g)
        }
        RegKind::Layers => Ok(Matrix::zeros(w.rows(), w.cols())),
        RegKind::Orthogonal => {
            let gram = w.matmul(&w.transpose())?;
            let diff = gram.sub(&Matrix::identity(w.rows()))?;
            let norm = frobenius(&diff);
            if norm == 0.0 {
                return Ok(Matrix::zeros(w.rows(), w.cols()));
            }
            Ok(diff.matmul(w)?.scale(2.0 / norm))
        }
        RegKind::Ridge => {
            reg.check_reference(w.data().len())?;
            let mut g = Matrix::zeros(w.rows(), w.cols());
            for (i, v) in w.data().iter().enumerate() {
                g.data_mut()[i] = 2.0 * (v - reg.reference_at(i));
            }
            Ok(g)
        }
        RegKind::HighFreq => {
            check_operator_dim(reg.kind, w)?;
            let a = smoothing_operator(w.rows())?;
            let op = Matrix::identity(w.rows()).sub(&a)?;
            frobenius_operator_grad(&op, w)
        }
        RegKind::LocalDiff => {
            check_operator_dim(reg.kind, w)?;
            let b = difference_operator(w.rows())?;
            frobenius_operator_grad(&b, w)
        }
    }
}

/// Gradient of ||C W||_F with respect to W: C^T C W / ||C W||_F.
fn frobenius_operator_grad(c: &Matrix, w: &Matrix) -> Result<Matrix> {
    let cw = c.matmul(w)?;
    let norm = frobenius(&cw);
    if norm == 0.0 {
        return Ok(Matrix::zeros(w.rows(), w.cols()));
    }
    Ok(c.transpose().matmul(&cw)?.scale(1.0 / norm))
}

/// The k x 6 metaparameter matrix plus the reconstruction and approximation
/// weights of the composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaMatrix {
    rows: Vec<[f64; REGULARIZER_COUNT]>,
    pub lambda_x: f64,
    pub lambda_y: f64,
}

impl LambdaMatrix {
    /// All regularizers off, approximation term on.
    pub fn zeros(layer_count: usize) -> Self {
        LambdaMatrix {
            rows: vec![[0.0; REGULARIZER_COUNT]; layer_count],
            lambda_x: 0.0,
            lambda_y: 1.0,
        }
    }

    pub fn from_rows(rows: Vec<[f64; REGULARIZER_COUNT]>, lambda_x: f64, lambda_y: f64) -> Self {
        LambdaMatrix {
            rows,
            lambda_x,
            lambda_y,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, layer: usize, reg: usize) -> f64 {
        self.rows[layer][reg]
    }

    pub fn set(&mut self, layer: usize, reg: usize, value: f64) {
        self.rows[layer][reg] = value;
    }

    pub fn row(&self, layer: usize) -> &[f64; REGULARIZER_COUNT] {
        &self.rows[layer]
    }

    pub fn set_row(&mut self, layer: usize, row: [f64; REGULARIZER_COUNT]) {
        self.rows[layer] = row;
    }

    pub fn rows(&self) -> &[[f64; REGULARIZER_COUNT]] {
        &self.rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_x < 0.0 || self.lambda_y < 0.0 {
            return Err(Error::Config(
                "lambda_x and lambda_y must be non-negative".to_string(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::Config(format!(
                        "lambda[{i}][{j}] = {v} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every regularizer entry is zero.
    pub fn is_unregularized(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(|&v| v == 0.0))
    }
}

/// The composite loss and its reported components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// S, the full weighted sum.
    pub total: f64,
    /// Reconstruction term Ex (0 when no head is attached or lambda_x = 0).
    pub e_x: f64,
    /// Approximation term Ey.
    pub e_y: f64,
    /// Per-layer, per-regularizer values. Entries whose metaparameter is
    /// zero are not evaluated and reported as 0.
    pub reg_values: Vec<[f64; REGULARIZER_COUNT]>,
}

/// Evaluate the composite loss over a batch. Regularizer values are computed
/// on the masked effective weights; entries with a zero metaparameter are
/// skipped.
pub fn composite_loss(
    model: &LayeredModel,
    mask: &StructureMask,
    batch: &[Sample],
    lambdas: &LambdaMatrix,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Size("composite_loss: empty batch".to_string()));
    }
    if lambdas.layer_count() != model.depth() {
        return Err(Error::Dimension(format!(
            "lambda matrix has {} rows, model has {} layers",
            lambdas.layer_count(),
            model.depth()
        )));
    }
    let mut e_y = 0.0;
    for &(x, y) in batch {
        let f = forward(model, mask, x)?;
        let d = y - f;
        e_y += d * d;
    }
    let mut e_x = 0.0;
    if lambdas.lambda_x > 0.0 && model.autoencoder().is_some() {
        for &(x, _) in batch {
            let r = reconstruct_masked(model, mask, x)?;
            for (xi, ri) in x.iter().zip(r.as_slice()) {
                let d = xi - ri;
                e_x += d * d;
            }
        }
    }
    let k = model.depth();
    let mut reg_values = vec![[0.0; REGULARIZER_COUNT]; k];
    let mut total = lambdas.lambda_x * e_x + lambdas.lambda_y * e_y;
    for i in 0..k {
        let masked = crate::core_math::hadamard(&model.layers()[i].weights, mask.layer(i))?;
        for j in 0..REGULARIZER_COUNT {
            let weight = lambdas.get(i, j);
            if weight == 0.0 {
                continue;
            }
            let value = reg_value(&Regularizer::plain(RegKind::from_index(j)), &masked, k)?;
            reg_values[i][j] = value;
            total += weight * value;
        }
    }
    Ok(LossBreakdown {
        total,
        e_x,
        e_y,
        reg_values,
    })
}
