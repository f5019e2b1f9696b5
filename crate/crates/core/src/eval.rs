//! Head evaluation: logits, softmax probabilities and predicted labels.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::headspec::{Activation, AffineLayer, HeadSpec, InputShape};
use crate::probe::ProbeBatch;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Responses of a head to `N` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSet {
    /// `N x K` raw logits.
    pub logits: Array2<f64>,
    /// `N x K` softmax of `logits`.
    pub probabilities: Array2<f64>,
    /// Row-wise argmax, lowest index on ties.
    pub labels: Vec<usize>,
}

impl ResponseSet {
    /// Builds a response set from logits alone.
    pub fn from_logits(logits: Array2<f64>) -> Self {
        let probabilities = softmax_rows(logits.view());
        let labels = probabilities.outer_iter().map(argmax).collect();
        Self {
            logits,
            probabilities,
            labels,
        }
    }

    pub fn num_probes(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    /// Reorders the rows (probes) by `order`; used to check permutation invariance.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            logits: self.logits.select(Axis(0), order),
            probabilities: self.probabilities.select(Axis(0), order),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    out
}

fn apply_layer(x: ArrayView2<'_, f64>, layer: &AffineLayer) -> Array2<f64> {
    let mut y = x.dot(&layer.weight.t());
    y += &layer.bias;
    if layer.activation == Activation::Relu {
        y.mapv_inplace(|v| v.max(0.0));
    }
    y
}

fn conv_gap_logits(
    x: ArrayView2<'_, f64>,
    layer: &AffineLayer,
    channels: usize,
    spatial: usize,
) -> Array2<f64> {
    let k = layer.out_width();
    let mut logits = Array2::zeros((x.nrows(), k));
    for (row, mut out) in x.outer_iter().zip(logits.outer_iter_mut()) {
        let fmap = row
            .to_shape((channels, spatial))
            .expect("probe row length is c*h*w");
        let mut resp = layer.weight.dot(&fmap);
        resp += &layer.bias.view().insert_axis(Axis(1));
        resp.mapv_inplace(|v| v.max(0.0));
        let pooled: Array1<f64> = resp.sum_axis(Axis(1)) / spatial as f64;
        out.assign(&pooled);
    }
    logits
}

/// Applies the head to `M` flattened latent vectors (one per row).
pub fn forward_latents(h: &HeadSpec, latents: ArrayView2<'_, f64>) -> Result<ResponseSet, EvalError> {
    let expected = h.input_shape().len();
    if latents.ncols() != expected {
        return Err(EvalError::ShapeMismatch(format!(
            "inputs have {} features, head expects {expected}",
            latents.ncols()
        )));
    }
    let logits = match h.input_shape() {
        InputShape::Flat { .. } => {
            let mut layers = h.layers().iter();
            let first = layers.next().expect("validated heads have a layer");
            let mut x = apply_layer(latents, first);
            for layer in layers {
                x = apply_layer(x.view(), layer);
            }
            x
        }
        InputShape::Spatial { c, h: height, w } => {
            conv_gap_logits(latents, &h.layers()[0], c, height * w)
        }
    };
    Ok(ResponseSet::from_logits(logits))
}

/// Applies the head to a probe batch.
pub fn forward(h: &HeadSpec, probes: &ProbeBatch) -> Result<ResponseSet, EvalError> {
    if probes.shape != h.input_shape() {
        return Err(EvalError::ShapeMismatch(format!(
            "probe shape {:?} does not match head input {:?}",
            probes.shape,
            h.input_shape()
        )));
    }
    forward_latents(h, probes.values.view())
}
