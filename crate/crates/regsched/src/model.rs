//! Layered feed-forward regression model with per-weight binary structure
//! masks, an optional autoencoder reconstruction head, parameter flattening,
//! and analytic backpropagation of the full composite loss.
//!
//! Layer weights are stored as `n_in x n_out` matrices; the forward pass
//! applies the transposed (masked) weight to the incoming activation. The
//! final layer always has output width 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core_math::{hadamard, Matrix, Vector};
use crate::error::{Error, Result};
use crate::regularizers::{self, LambdaMatrix};

/// A training sample: feature slice plus scalar target.
pub type Sample<'a> = (&'a [f64], f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation. relu'(0) := 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

/// Linear decoder reconstructing the input from the representation produced
/// by the first `encoder_depth` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderHead {
    pub weights: Matrix,
    pub bias: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    layers: Vec<Layer>,
    /// Number of leading layers treated as the encoder (0 = no autoencoder).
    encoder_depth: usize,
    autoencoder: Option<AutoencoderHead>,
}

fn init_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

impl LayeredModel {
    /// Build a model from explicit layers, checking chain compatibility.
    pub fn from_layers(
        layers: Vec<Layer>,
        encoder_depth: usize,
        autoencoder: Option<AutoencoderHead>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".to_string()));
        }
        for w in layers.windows(2) {
            if w[0].weights.cols() != w[1].weights.rows() {
                return Err(Error::Dimension(format!(
                    "layer output width {} does not feed layer input width {}",
                    w[0].weights.cols(),
                    w[1].weights.rows()
                )));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weights.cols() {
                return Err(Error::Dimension(
                    "bias length does not match layer output width".to_string(),
                ));
            }
        }
        if layers.last().unwrap().weights.cols() != 1 {
            return Err(Error::Config(
                "final layer output width must be 1 for regression".to_string(),
            ));
        }
        if encoder_depth >= layers.len() {
            return Err(Error::Config(format!(
                "encoder depth {} must be smaller than layer count {}",
                encoder_depth,
                layers.len()
            )));
        }
        if let Some(head) = &autoencoder {
            if encoder_depth == 0 {
                return Err(Error::Config(
                    "autoencoder head requires encoder depth >= 1".to_string(),
                ));
            }
            let rep = layers[encoder_depth - 1].weights.cols();
            let input = layers[0].weights.rows();
            if head.weights.shape() != (rep, input) || head.bias.len() != input {
                return Err(Error::Dimension(format!(
                    "decoder must map representation width {rep} back to input width {input}"
                )));
            }
        }
        Ok(LayeredModel {
            layers,
            encoder_depth,
            autoencoder,
        })
    }

    /// Randomly initialized model: widths `[input] ++ hidden ++ [1]`, the
    /// given activation on hidden layers, identity output. When
    /// `encoder_depth > 0` a linear decoder head is attached.
    pub fn random(
        input_dim: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        encoder_depth: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input_dim);
        widths.extend_from_slice(hidden);
        widths.push(1);
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".to_string()));
        }
        let mut layers = Vec::new();
        for i in 0..widths.len() - 1 {
            let activation = if i + 2 == widths.len() {
                Activation::Identity
            } else {
                hidden_activation
            };
            layers.push(Layer {
                weights: init_matrix(widths[i], widths[i + 1], &mut rng),
                bias: Vector::zeros(widths[i + 1]),
                activation,
            });
        }
        let autoencoder = if encoder_depth > 0 {
            if encoder_depth >= layers.len() {
                return Err(Error::Config(format!(
                    "encoder depth {} must be smaller than layer count {}",
                    encoder_depth,
                    layers.len()
                )));
            }
            Some(AutoencoderHead {
                weights: init_matrix(widths[encoder_depth], input_dim, &mut rng),
                bias: Vector::zeros(input_dim),
            })
        } else {
            None
        };
        LayeredModel::from_layers(layers, encoder_depth, autoencoder)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_depth
    }

    pub fn autoencoder(&self) -> Option<&AutoencoderHead> {
        self.autoencoder.as_ref()
    }

    /// Widths of the hidden representations, i.e. output width of every
    /// layer except the final scalar one.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.cols())
            .collect()
    }

    /// Total number of weight-matrix entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols())
            .sum()
    }

    /// Total number of parameters: weights, biases and decoder head.
    pub fn param_count(&self) -> usize {
        let mut n: usize = self
            .layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum();
        if let Some(head) = &self.autoencoder {
            n += head.weights.rows() * head.weights.cols() + head.bias.len();
        }
        n
    }
}

/// Per-layer binary matrices shaped like the layer weights. An entry of 0
/// removes the corresponding weight from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMask {
    layers: Vec<Matrix>,
}

impl StructureMask {
    /// All-ones mask matching the model's layer shapes.
    pub fn full(model: &LayeredModel) -> Self {
        StructureMask {
            layers: model
                .layers
                .iter()
                .map(|l| Matrix::ones(l.weights.rows(), l.weights.cols()))
                .collect(),
        }
    }

    /// Build from explicit matrices; entries must be exactly 0 or 1.
    pub fn from_matrices(layers: Vec<Matrix>) -> Result<Self> {
        for (i, m) in layers.iter().enumerate() {
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Config(format!(
                    "mask layer {i} has an entry outside {{0, 1}}"
                )));
            }
        }
        Ok(StructureMask { layers })
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.layers[i]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn matches(&self, model: &LayeredModel) -> Result<()> {
        if self.layers.len() != model.layers.len() {
            return Err(Error::Dimension(format!(
                "mask has {} layers, model has {}",
                self.layers.len(),
                model.layers.len()
            )));
        }
        for (i, (m, l)) in self.layers.iter().zip(&model.layers).enumerate() {
            if m.shape() != l.weights.shape() {
                return Err(Error::Dimension(format!(
                    "mask layer {i} shape {:?} does not match weights {:?}",
                    m.shape(),
                    l.weights.shape()
                )));
            }
        }
        Ok(())
    }

    /// Count of active (1) entries across all layers.
    pub fn active_count(&self) -> usize {
        self.layers
            .iter()
            .map(|m| m.data().iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    /// Errors if some layer has no active column left (a fully dead layer
    /// cuts the network).
    pub fn validate_alive(&self) -> Result<()> {
        for (i, m) in self.layers.iter().enumerate() {
            let alive = (0..m.cols()).any(|c| (0..m.rows()).any(|r| m.get(r, c) != 0.0));
            if !alive {
                return Err(Error::Config(format!("mask layer {i} is fully dead")));
            }
        }
        Ok(())
    }
}

fn masked_weights(model: &LayeredModel, mask: &StructureMask) -> Result<Vec<Matrix>> {
    mask.matches(model)?;
    model
        .layers
        .iter()
        .zip(mask.layers())
        .map(|(l, m)| hadamard(&l.weights, m))
        .collect()
}

fn apply_layer(weights: &Matrix, bias: &Vector, input: &[f64]) -> Vec<f64> {
    let (n_in, n_out) = weights.shape();
    debug_assert_eq!(n_in, input.len());
    let mut z = bias.as_slice().to_vec();
    for p in 0..n_in {
        let a = input[p];
        if a == 0.0 {
            continue;
        }
        let row = weights.row(p);
        for q in 0..n_out {
            z[q] += a * row[q];
        }
    }
    z
}

struct Trace {
    /// activations a[0] = x .. a[k] = output
    activations: Vec<Vec<f64>>,
    /// pre-activations z[i] feeding layer i's activation, i = 0..k-1
    pre_activations: Vec<Vec<f64>>,
}

fn forward_trace(model: &LayeredModel, masked: &[Matrix], x: &[f64]) -> Result<Trace> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "input length {} does not match model input width {}",
            x.len(),
            model.input_dim()
        )));
    }
    let mut activations = Vec::with_capacity(model.depth() + 1);
    let mut pre_activations = Vec::with_capacity(model.depth());
    activations.push(x.to_vec());
    for (layer, weights) in model.layers.iter().zip(masked) {
        let z = apply_layer(weights, &layer.bias, activations.last().unwrap());
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre_activations.push(z);
        activations.push(a);
    }
    Ok(Trace {
        activations,
        pre_activations,
    })
}

/// Masked forward pass: each weight matrix is replaced by its Hadamard
/// product with the mask before application.
pub fn forward(model: &LayeredModel, mask: &StructureMask, x: &[f64]) -> Result<f64> {
    let masked = masked_weights(model, mask)?;
    let trace = forward_trace(model, &masked, x)?;
    Ok(trace.activations.last().unwrap()[0])
}

/// Masked predictions for a batch of inputs.
pub fn predict(model: &LayeredModel, mask: &StructureMask, xs: &[&[f64]]) -> Result<Vec<f64>> {
    let masked = masked_weights(model, mask)?;
    xs.iter()
        .map(|x| forward_trace(model, &masked, x).map(|t| t.activations.last().unwrap()[0]))
        .collect()
}

fn encode(model: &LayeredModel, masked: &[Matrix], x: &[f64]) -> Result<Vec<f64>> {
    let s = model.encoder_depth;
    let mut a = x.to_vec();
    for i in 0..s {
        let z = apply_layer(&masked[i], &model.layers[i].bias, &a);
        a = z
            .iter()
            .map(|&v| model.layers[i].activation.apply(v))
            .collect();
    }
    Ok(a)
}

fn decode(head: &AutoencoderHead, representation: &[f64]) -> Vec<f64> {
    apply_layer(&head.weights, &head.bias, representation)
}

/// Linear reconstruction of the input through the autoencoder head.
pub fn reconstruct(model: &LayeredModel, x: &[f64]) -> Result<Vector> {
    let head = model
        .autoencoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no autoencoder head".to_string()))?;
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "input length {} does not match model input width {}",
            x.len(),
            model.input_dim()
        )));
    }
    let full: Vec<Matrix> = model.layers.iter().map(|l| l.weights.clone()).collect();
    let rep = encode(model, &full, x)?;
    Ok(Vector::from_vec(decode(head, &rep)))
}

/// Reconstruction with the structure mask applied to the encoder layers.
pub fn reconstruct_masked(model: &LayeredModel, mask: &StructureMask, x: &[f64]) -> Result<Vector> {
    let head = model
        .autoencoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no autoencoder head".to_string()))?;
    let masked = masked_weights(model, mask)?;
    let rep = encode(model, &masked, x)?;
    Ok(Vector::from_vec(decode(head, &rep)))
}

/// Gradient of the composite loss with the same shape as the model
/// parameters. Masked weight coordinates carry exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub decoder_weights: Option<Matrix>,
    pub decoder_bias: Option<Vector>,
}

impl ModelGradient {
    pub fn zeros_like(model: &LayeredModel) -> Self {
        ModelGradient {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| Vector::zeros(l.bias.len()))
                .collect(),
            decoder_weights: model
                .autoencoder
                .as_ref()
                .map(|h| Matrix::zeros(h.weights.rows(), h.weights.cols())),
            decoder_bias: model
                .autoencoder
                .as_ref()
                .map(|h| Vector::zeros(h.bias.len())),
        }
    }

    /// Same coordinate order as `flatten`.
    pub fn to_flat(&self) -> Vector {
        let mut data = Vec::new();
        for w in self.weights.iter().rev() {
            data.extend_from_slice(w.data());
        }
        for b in self.biases.iter().rev() {
            data.extend_from_slice(b.as_slice());
        }
        if let Some(w) = &self.decoder_weights {
            data.extend_from_slice(w.data());
        }
        if let Some(b) = &self.decoder_bias {
            data.extend_from_slice(b.as_slice());
        }
        Vector::from_vec(data)
    }
}

/// Analytic gradient of the composite loss over a batch: the approximation
/// term, the reconstruction term when active, and every regularizer with a
/// nonzero metaparameter.
pub fn backward(
    model: &LayeredModel,
    mask: &StructureMask,
    batch: &[Sample],
    lambdas: &LambdaMatrix,
) -> Result<ModelGradient> {
    if batch.is_empty() {
        return Err(Error::Size("backward: empty batch".to_string()));
    }
    if lambdas.layer_count() != model.depth() {
        return Err(Error::Dimension(format!(
            "lambda matrix has {} rows, model has {} layers",
            lambdas.layer_count(),
            model.depth()
        )));
    }
    let masked = masked_weights(model, mask)?;
    let mut grad = ModelGradient::zeros_like(model);
    let k = model.depth();
    let s = model.encoder_depth;
    let reconstruction_active = lambdas.lambda_x > 0.0 && model.autoencoder.is_some();

    for &(x, y) in batch {
        let trace = forward_trace(model, &masked, x)?;
        let prediction = trace.activations[k][0];
        // dL/da for the activation feeding backwards, starting at the output
        let mut upstream = vec![lambdas.lambda_y * 2.0 * (prediction - y)];
        for i in (0..k).rev() {
            if reconstruction_active && i + 1 == s {
                // a[s] also feeds the decoder
                let head = model.autoencoder.as_ref().unwrap();
                let rep = &trace.activations[s];
                let reconstruction = decode(head, rep);
                let residual: Vec<f64> = reconstruction
                    .iter()
                    .zip(x)
                    .map(|(r, xi)| 2.0 * lambdas.lambda_x * (r - xi))
                    .collect();
                let dw = grad.decoder_weights.as_mut().unwrap();
                for p in 0..rep.len() {
                    for q in 0..residual.len() {
                        let v = dw.get(p, q) + rep[p] * residual[q];
                        dw.set(p, q, v);
                    }
                }
                let db = grad.decoder_bias.as_mut().unwrap();
                for q in 0..residual.len() {
                    db.set(q, db.get(q) + residual[q]);
                }
                // propagate into the encoder representation
                for p in 0..rep.len() {
                    let mut acc = 0.0;
                    for q in 0..residual.len() {
                        acc += head.weights.get(p, q) * residual[q];
                    }
                    upstream[p] += acc;
                }
            }
            let layer = &model.layers[i];
            let z = &trace.pre_activations[i];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(z)
                .map(|(u, &zq)| u * layer.activation.derivative(zq))
                .collect();
            let prev = &trace.activations[i];
            let gw = &mut grad.weights[i];
            for p in 0..prev.len() {
                if prev[p] == 0.0 {
                    continue;
                }
                for q in 0..delta.len() {
                    let v = gw.get(p, q) + prev[p] * delta[q];
                    gw.set(p, q, v);
                }
            }
            let gb = &mut grad.biases[i];
            for q in 0..delta.len() {
                gb.set(q, gb.get(q) + delta[q]);
            }
            if i > 0 {
                let mut down = vec![0.0; prev.len()];
                for p in 0..prev.len() {
                    let row = masked[i].row(p);
                    let mut acc = 0.0;
                    for q in 0..delta.len() {
                        acc += row[q] * delta[q];
                    }
                    down[p] = acc;
                }
                upstream = down;
            }
        }
        // handle the decoder when it hangs off a[s] with s == 0 impossible
        // (encoder depth >= 1 whenever a head exists), so nothing more here.
    }

    // regularizer contributions, evaluated on the masked effective weights
    for i in 0..k {
        for j in 0..regularizers::REGULARIZER_COUNT {
            let weight = lambdas.get(i, j);
            if weight == 0.0 {
                continue;
            }
            let reg = regularizers::Regularizer::plain(regularizers::RegKind::from_index(j));
            let g = regularizers::reg_grad(&reg, &masked[i], k)?;
            grad.weights[i] = grad.weights[i].add(&g.scale(weight))?;
        }
    }

    // masked coordinates receive exactly zero gradient
    for i in 0..k {
        grad.weights[i] = hadamard(&grad.weights[i], mask.layer(i))?;
    }
    Ok(grad)
}

/// One plain gradient-descent step. Only unmasked weight entries move;
/// biases and the decoder head are always updated.
pub fn sgd_step(
    model: &mut LayeredModel,
    mask: &StructureMask,
    grad: &ModelGradient,
    learning_rate: f64,
) -> Result<()> {
    mask.matches(model)?;
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let gw = &grad.weights[i];
        let m = mask.layer(i);
        for p in 0..layer.weights.rows() {
            for q in 0..layer.weights.cols() {
                if m.get(p, q) != 0.0 {
                    let v = layer.weights.get(p, q) - learning_rate * gw.get(p, q);
                    layer.weights.set(p, q, v);
                }
            }
        }
        let gb = &grad.biases[i];
        for q in 0..layer.bias.len() {
            layer.bias.set(q, layer.bias.get(q) - learning_rate * gb.get(q));
        }
    }
    if let Some(head) = model.autoencoder.as_mut() {
        if let (Some(gw), Some(gb)) = (&grad.decoder_weights, &grad.decoder_bias) {
            for p in 0..head.weights.rows() {
                for q in 0..head.weights.cols() {
                    let v = head.weights.get(p, q) - learning_rate * gw.get(p, q);
                    head.weights.set(p, q, v);
                }
            }
            for q in 0..head.bias.len() {
                head.bias.set(q, head.bias.get(q) - learning_rate * gb.get(q));
            }
        }
    }
    Ok(())
}

/// Flattened parameter vector: weight matrices in reverse layer order
/// (deepest first, row-major), then biases in the same order, then the
/// decoder head when present.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub data: Vector,
    pub layout: FlatLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatLayout {
    weight_shapes: Vec<(usize, usize)>,
    activations: Vec<Activation>,
    encoder_depth: usize,
    decoder_shape: Option<(usize, usize)>,
}

impl FlatLayout {
    /// Flat index of weight (row, col) of the given layer (0-based).
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let mut offset = 0;
        for i in (layer + 1..self.weight_shapes.len()).rev() {
            let (r, c) = self.weight_shapes[i];
            offset += r * c;
        }
        let (_, cols) = self.weight_shapes[layer];
        offset + row * cols + col
    }

    pub fn total_len(&self) -> usize {
        let weights: usize = self.weight_shapes.iter().map(|(r, c)| r * c).sum();
        let biases: usize = self.weight_shapes.iter().map(|(_, c)| c).sum();
        let decoder = self.decoder_shape.map_or(0, |(r, c)| r * c + c);
        weights + biases + decoder
    }
}

pub fn flatten(model: &LayeredModel) -> FlatParams {
    let mut data = Vec::with_capacity(model.param_count());
    for layer in model.layers.iter().rev() {
        data.extend_from_slice(layer.weights.data());
    }
    for layer in model.layers.iter().rev() {
        data.extend_from_slice(layer.bias.as_slice());
    }
    if let Some(head) = &model.autoencoder {
        data.extend_from_slice(head.weights.data());
        data.extend_from_slice(head.bias.as_slice());
    }
    FlatParams {
        data: Vector::from_vec(data),
        layout: FlatLayout {
            weight_shapes: model.layers.iter().map(|l| l.weights.shape()).collect(),
            activations: model.layers.iter().map(|l| l.activation).collect(),
            encoder_depth: model.encoder_depth,
            decoder_shape: model.autoencoder.as_ref().map(|h| h.weights.shape()),
        },
    }
}

pub fn unflatten(fp: &FlatParams) -> Result<LayeredModel> {
    if fp.data.len() != fp.layout.total_len() {
        return Err(Error::Dimension(format!(
            "flat vector length {} does not match layout length {}",
            fp.data.len(),
            fp.layout.total_len()
        )));
    }
    let k = fp.layout.weight_shapes.len();
    let slice = fp.data.as_slice();
    let mut cursor = 0;
    let mut weights: Vec<Option<Matrix>> = vec![None; k];
    for i in (0..k).rev() {
        let (r, c) = fp.layout.weight_shapes[i];
        weights[i] = Some(Matrix::new(r, c, slice[cursor..cursor + r * c].to_vec())?);
        cursor += r * c;
    }
    let mut biases: Vec<Option<Vector>> = vec![None; k];
    for i in (0..k).rev() {
        let (_, c) = fp.layout.weight_shapes[i];
        biases[i] = Some(Vector::from_vec(slice[cursor..cursor + c].to_vec()));
        cursor += c;
    }
    let layers = (0..k)
        .map(|i| Layer {
            weights: weights[i].take().unwrap(),
            bias: biases[i].take().unwrap(),
            activation: fp.layout.activations[i],
        })
        .collect();
    let autoencoder = match fp.layout.decoder_shape {
        Some((r, c)) => {
            let w = Matrix::new(r, c, slice[cursor..cursor + r * c].to_vec())?;
            cursor += r * c;
            let b = Vector::from_vec(slice[cursor..cursor + c].to_vec());
            cursor += c;
            Some(AutoencoderHead { weights: w, bias: b })
        }
        None => None,
    };
    debug_assert_eq!(cursor, slice.len());
    LayeredModel::from_layers(layers, fp.layout.encoder_depth, autoencoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{LambdaMatrix, REGULARIZER_COUNT};
    use rand::Rng;

    fn single_layer(weights: Matrix, activation: Activation) -> LayeredModel {
        let bias = Vector::zeros(weights.cols());
        LayeredModel::from_layers(
            vec![Layer {
                weights,
                bias,
                activation,
            }],
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn forward_identity_chain() {
        // weights pick out x[0] + x[1] with identity activation
        let w = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let model = single_layer(w, Activation::Identity);
        let mask = StructureMask::full(&model);
        let out = forward(&model, &mask, &[2.0, -1.0]).unwrap();
        assert_eq!(out, 1.0);
    }

    #[test]
    fn forward_zero_mask_equals_zero_weights() {
        let model = LayeredModel::random(3, &[4], Activation::Tanh, 0, 7).unwrap();
        let mut mask = StructureMask::full(&model);
        *mask.layer_mut(0) = Matrix::zeros(3, 4);

        let mut zeroed = model.clone();
        zeroed.layers_mut()[0].weights = Matrix::zeros(3, 4);
        let full = StructureMask::full(&model);

        let x = [0.3, -0.2, 0.9];
        let a = forward(&model, &mask, &x).unwrap();
        let b = forward(&zeroed, &full, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_random_mask_matches_weight_zeroing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let model =
                LayeredModel::random(4, &[5, 3], Activation::Relu, 0, 1000 + trial).unwrap();
            let mut mask_layers = Vec::new();
            for l in model.layers() {
                mask_layers.push(Matrix::from_fn(l.weights.rows(), l.weights.cols(), |_, _| {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }));
            }
            let mask = StructureMask::from_matrices(mask_layers).unwrap();

            let mut zeroed = model.clone();
            for (i, l) in zeroed.layers_mut().iter_mut().enumerate() {
                l.weights = hadamard(&l.weights, mask.layer(i)).unwrap();
            }
            let full = StructureMask::full(&model);

            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = forward(&model, &mask, &x).unwrap();
            let b = forward(&zeroed, &full, &x).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mask_inertness_under_perturbation() {
        let model = LayeredModel::random(5, &[4, 3], Activation::Sigmoid, 0, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut mask_layers = Vec::new();
        for l in model.layers() {
            mask_layers.push(Matrix::from_fn(l.weights.rows(), l.weights.cols(), |_, _| {
                if rng.gen_bool(0.6) {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        let mask = StructureMask::from_matrices(mask_layers).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let before = forward(&model, &mask, &x).unwrap();

        let mut perturbed = model.clone();
        for (i, l) in perturbed.layers_mut().iter_mut().enumerate() {
            for p in 0..l.weights.rows() {
                for q in 0..l.weights.cols() {
                    if mask.layer(i).get(p, q) == 0.0 {
                        l.weights.set(p, q, rng.gen_range(-50.0..50.0));
                    }
                }
            }
        }
        let after = forward(&perturbed, &mask, &x).unwrap();
        assert_eq!(before, after);
    }

    fn identity_autoencoder(n: usize) -> LayeredModel {
        // encoder = identity layer, decoder = identity
        let layers = vec![
            Layer {
                weights: Matrix::identity(n),
                bias: Vector::zeros(n),
                activation: Activation::Identity,
            },
            Layer {
                weights: Matrix::from_fn(n, 1, |_, _| 0.0),
                bias: Vector::zeros(1),
                activation: Activation::Identity,
            },
        ];
        let head = AutoencoderHead {
            weights: Matrix::identity(n),
            bias: Vector::zeros(n),
        };
        LayeredModel::from_layers(layers, 1, Some(head)).unwrap()
    }

    #[test]
    fn reconstruct_identity() {
        let model = identity_autoencoder(3);
        let r = reconstruct(&model, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn reconstruct_zero_encoder_returns_decoder_bias() {
        let layers = vec![
            Layer {
                weights: Matrix::zeros(2, 3),
                bias: Vector::zeros(3),
                activation: Activation::Identity,
            },
            Layer {
                weights: Matrix::zeros(3, 1),
                bias: Vector::zeros(1),
                activation: Activation::Identity,
            },
        ];
        let head = AutoencoderHead {
            weights: Matrix::zeros(3, 2),
            bias: Vector::from_vec(vec![5.0, -7.0]),
        };
        let model = LayeredModel::from_layers(layers, 1, Some(head)).unwrap();
        let r = reconstruct(&model, &[100.0, -42.0]).unwrap();
        assert_eq!(r.as_slice(), &[5.0, -7.0]);
    }

    #[test]
    fn reconstruct_matches_explicit_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let enc = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        let dec = Matrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let enc_bias: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dec_bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let layers = vec![
            Layer {
                weights: enc.clone(),
                bias: Vector::from_vec(enc_bias.clone()),
                activation: Activation::Identity,
            },
            Layer {
                weights: Matrix::zeros(4, 1),
                bias: Vector::zeros(1),
                activation: Activation::Identity,
            },
        ];
        let head = AutoencoderHead {
            weights: dec.clone(),
            bias: Vector::from_vec(dec_bias.clone()),
        };
        let model = LayeredModel::from_layers(layers, 1, Some(head)).unwrap();

        let x = [0.5, -1.5, 2.5];
        let got = reconstruct(&model, &x).unwrap();

        // hand-composed: r = dec^T (enc^T x + b) + b'
        let x_col = Matrix::new(3, 1, x.to_vec()).unwrap();
        let h = enc.transpose().matmul(&x_col).unwrap();
        let h = Matrix::from_fn(4, 1, |i, _| h.get(i, 0) + enc_bias[i]);
        let r = dec.transpose().matmul(&h).unwrap();
        for i in 0..3 {
            let expected = r.get(i, 0) + dec_bias[i];
            assert!((got.get(i) - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn reconstruct_requires_head() {
        let model = LayeredModel::random(3, &[2], Activation::Relu, 0, 1).unwrap();
        assert!(matches!(
            reconstruct(&model, &[0.0, 0.0, 0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn flatten_ordering_explicit() {
        // two layers with known weights: ordering is [vec(W2), vec(W1),
        // b2, b1]
        let layers = vec![
            Layer {
                weights: Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
                bias: Vector::from_vec(vec![10.0, 11.0]),
                activation: Activation::Identity,
            },
            Layer {
                weights: Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap(),
                bias: Vector::from_vec(vec![12.0]),
                activation: Activation::Identity,
            },
        ];
        let model = LayeredModel::from_layers(layers, 0, None).unwrap();
        let fp = flatten(&model);
        assert_eq!(
            fp.data.as_slice(),
            &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0, 12.0, 10.0, 11.0]
        );
        assert_eq!(fp.layout.weight_index(1, 1, 0), 1);
        assert_eq!(fp.layout.weight_index(0, 1, 1), 5);
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        for seed in 0..5 {
            let model = LayeredModel::random(6, &[5, 4], Activation::Tanh, 1, seed).unwrap();
            let fp = flatten(&model);
            let back = unflatten(&fp).unwrap();
            assert_eq!(model, back);

            // forward equivalence, bit-identical
            let mask = StructureMask::full(&model);
            let x = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
            assert_eq!(
                forward(&model, &mask, &x).unwrap(),
                forward(&back, &mask, &x).unwrap()
            );
        }
    }

    #[test]
    fn unflatten_length_mismatch_errors() {
        let model = LayeredModel::random(3, &[2], Activation::Relu, 0, 5).unwrap();
        let mut fp = flatten(&model);
        fp.data = Vector::zeros(fp.data.len() + 1);
        assert!(matches!(unflatten(&fp), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_linear_closed_form() {
        // single linear layer, one sample, lambda_y = 1: grad = 2(f-y) x
        let w = Matrix::from_rows(&[vec![0.5], vec![-1.0]]).unwrap();
        let model = single_layer(w, Activation::Identity);
        let mask = StructureMask::full(&model);
        let lambdas = LambdaMatrix::zeros(1);
        let x = [2.0, 3.0];
        let y = 1.0;
        let f = forward(&model, &mask, &x).unwrap();
        let grad = backward(&model, &mask, &[(&x, y)], &lambdas).unwrap();
        for p in 0..2 {
            let expected = 2.0 * (f - y) * x[p];
            assert!((grad.weights[0].get(p, 0) - expected).abs() < 1e-12);
        }
        assert!((grad.biases[0].get(0) - 2.0 * (f - y)).abs() < 1e-12);
    }

    #[test]
    fn backward_masked_coordinates_are_zero() {
        let model = LayeredModel::random(4, &[5, 3], Activation::Tanh, 1, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let mut mask_layers = Vec::new();
        for l in model.layers() {
            mask_layers.push(Matrix::from_fn(l.weights.rows(), l.weights.cols(), |_, _| {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        let mask = StructureMask::from_matrices(mask_layers).unwrap();
        let mut lambdas = LambdaMatrix::zeros(model.depth());
        lambdas.lambda_x = 0.5;
        for i in 0..model.depth() {
            for j in 0..REGULARIZER_COUNT {
                lambdas.set(i, j, 0.1);
            }
        }
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad = backward(&model, &mask, &[(&x, 0.7)], &lambdas).unwrap();
        for i in 0..model.depth() {
            for p in 0..grad.weights[i].rows() {
                for q in 0..grad.weights[i].cols() {
                    if mask.layer(i).get(p, q) == 0.0 {
                        assert_eq!(grad.weights[i].get(p, q), 0.0);
                    }
                }
            }
        }
    }

    /// Central finite differences of the composite loss, the independent
    /// oracle for the analytic gradient.
    fn finite_difference(
        model: &LayeredModel,
        mask: &StructureMask,
        batch: &[Sample],
        lambdas: &LambdaMatrix,
        h: f64,
    ) -> Vec<f64> {
        let fp = flatten(model);
        let n = fp.data.len();
        let mut out = Vec::with_capacity(n);
        for idx in 0..n {
            let mut plus = fp.clone();
            plus.data.set(idx, plus.data.get(idx) + h);
            let mut minus = fp.clone();
            minus.data.set(idx, minus.data.get(idx) - h);
            let m_plus = unflatten(&plus).unwrap();
            let m_minus = unflatten(&minus).unwrap();
            let s_plus = crate::regularizers::composite_loss(&m_plus, mask, batch, lambdas)
                .unwrap()
                .total;
            let s_minus = crate::regularizers::composite_loss(&m_minus, mask, batch, lambdas)
                .unwrap()
                .total;
            out.push((s_plus - s_minus) / (2.0 * h));
        }
        out
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let model = LayeredModel::random(5, &[6, 4], Activation::Tanh, 1, 40).unwrap();
        let mask = StructureMask::full(&model);
        let mut lambdas = LambdaMatrix::zeros(model.depth());
        lambdas.lambda_x = 0.3;
        for i in 0..model.depth() {
            for j in 0..REGULARIZER_COUNT {
                lambdas.set(i, j, 0.1);
            }
        }
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .collect();
        let batch: Vec<Sample> = xs
            .iter()
            .map(|x| (x.as_slice(), rng.gen_range(-1.0..1.0)))
            .collect();

        let analytic = backward(&model, &mask, &batch, &lambdas).unwrap().to_flat();
        let numeric = finite_difference(&model, &mask, &batch, &lambdas, 1e-5);
        let flat_model = flatten(&model);
        for idx in 0..numeric.len() {
            // skip coordinates near the L1 kink
            if idx < model.weight_count() && flat_model.data.get(idx).abs() < 1e-6 {
                continue;
            }
            let a = analytic.get(idx);
            let n = numeric[idx];
            let tol = 1e-8_f64.max(1e-5 * a.abs());
            assert!(
                (a - n).abs() <= tol,
                "coordinate {idx}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn sgd_step_basics() {
        let mut model = LayeredModel::random(3, &[2], Activation::Relu, 0, 9).unwrap();
        let mask = StructureMask::full(&model);
        let zero = ModelGradient::zeros_like(&model);
        let before = model.clone();
        sgd_step(&mut model, &mask, &zero, 0.5).unwrap();
        assert_eq!(model, before);

        let mut grad = ModelGradient::zeros_like(&model);
        grad.weights[0].set(1, 0, 2.0);
        sgd_step(&mut model, &mask, &grad, 0.0).unwrap();
        assert_eq!(model, before);

        sgd_step(&mut model, &mask, &grad, 0.25).unwrap();
        assert_eq!(
            model.layers()[0].weights.get(1, 0),
            before.layers()[0].weights.get(1, 0) - 0.5
        );
    }

    #[test]
    fn sgd_step_respects_mask() {
        let mut model = LayeredModel::random(3, &[3], Activation::Relu, 0, 10).unwrap();
        let mut mask = StructureMask::full(&model);
        mask.layer_mut(0).set(0, 0, 0.0);
        let initial = model.layers()[0].weights.get(0, 0);
        let mut grad = ModelGradient::zeros_like(&model);
        for p in 0..3 {
            for q in 0..3 {
                grad.weights[0].set(p, q, 1.0);
            }
        }
        for _ in 0..17 {
            sgd_step(&mut model, &mask, &grad, 0.1).unwrap();
        }
        assert_eq!(model.layers()[0].weights.get(0, 0), initial);
    }
}
