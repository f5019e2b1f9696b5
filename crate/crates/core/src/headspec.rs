//! Portable prediction-head representation and its JSON document format.
//!
//! A [`HeadSpec`] is validated once, on construction or parse, and is
//! immutable afterwards. Every downstream evaluation relies on the shape
//! checks performed here.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::json;

/// The only document version this crate reads and writes.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HeadSpecError {
    #[error("malformed head-spec document: {0}")]
    MalformedDocument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite weight or bias in layer {layer}")]
    NonFiniteWeight { layer: usize },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("activation batch is empty")]
    EmptyBatch,
    #[error("non-finite activation at row {row}, column {col}")]
    NonFiniteActivation { row: usize, col: usize },
    #[error("invalid latent range: {0}")]
    InvalidRange(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    FullyConnected,
    /// A single 1x1 convolution with ReLU, followed by global average pooling.
    Conv1x1Gap,
}

/// Shape of one latent input to the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputShape {
    Flat { d: usize },
    Spatial { c: usize, h: usize, w: usize },
}

impl InputShape {
    /// Number of scalars in one latent vector (`d` or `c*h*w`).
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat { d } => d,
            InputShape::Spatial { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            InputShape::Flat { .. } => HeadKind::FullyConnected,
            InputShape::Spatial { .. } => HeadKind::Conv1x1Gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "none")]
    Identity,
}

/// One affine layer `y = act(W x + b)`; `weight` is `out_width x in_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.nrows()
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Coarse range of backbone activations observed on random input noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentRangeInfo {
    min_val: f64,
    max_val: f64,
    probe_batch: u64,
}

impl LatentRangeInfo {
    pub fn new(min_val: f64, max_val: f64, probe_batch: u64) -> Result<Self, HeadSpecError> {
        if !min_val.is_finite() || !max_val.is_finite() {
            return Err(HeadSpecError::InvalidRange(format!(
                "bounds must be finite, got [{min_val}, {max_val}]"
            )));
        }
        if min_val > max_val {
            return Err(HeadSpecError::InvalidRange(format!(
                "min {min_val} exceeds max {max_val}"
            )));
        }
        Ok(Self {
            min_val,
            max_val,
            probe_batch,
        })
    }

    pub fn min_val(&self) -> f64 {
        self.min_val
    }

    pub fn max_val(&self) -> f64 {
        self.max_val
    }

    /// `max(|min|, |max|)`.
    pub fn abs_max(&self) -> f64 {
        self.min_val.abs().max(self.max_val.abs())
    }

    pub fn nonnegative(&self) -> bool {
        self.min_val >= 0.0
    }

    pub fn probe_batch(&self) -> u64 {
        self.probe_batch
    }
}

/// Elementwise extremes of a `b x D` activation dump.
pub fn estimate_latent_range(
    activations: ArrayView2<'_, f64>,
) -> Result<LatentRangeInfo, HeadSpecError> {
    if activations.nrows() == 0 || activations.ncols() == 0 {
        return Err(HeadSpecError::EmptyBatch);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ((row, col), &v) in activations.indexed_iter() {
        if !v.is_finite() {
            return Err(HeadSpecError::NonFiniteActivation { row, col });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    LatentRangeInfo::new(lo, hi, activations.nrows() as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    model_id: String,
    input_shape: InputShape,
    num_classes: usize,
    layers: Vec<AffineLayer>,
    latent_range: LatentRangeInfo,
    arch_tag: Option<String>,
}

impl HeadSpec {
    /// Builds a head and checks every structural invariant.
    pub fn new(
        model_id: impl Into<String>,
        input_shape: InputShape,
        num_classes: usize,
        layers: Vec<AffineLayer>,
        latent_range: LatentRangeInfo,
    ) -> Result<Self, HeadSpecError> {
        let spec = Self {
            model_id: model_id.into(),
            input_shape,
            num_classes,
            layers,
            latent_range,
            arch_tag: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_arch_tag(mut self, tag: impl Into<String>) -> Self {
        self.arch_tag = Some(tag.into());
        self
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn with_latent_range(mut self, range: LatentRangeInfo) -> Self {
        self.latent_range = range;
        self
    }

    /// Returns a copy with `layers` swapped in, re-validated.
    pub fn with_layers(&self, layers: Vec<AffineLayer>) -> Result<Self, HeadSpecError> {
        let spec = Self {
            layers,
            ..self.clone()
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), HeadSpecError> {
        let mismatch = |msg: String| Err(HeadSpecError::ShapeMismatch(msg));
        if self.num_classes == 0 {
            return mismatch("num_classes must be positive".into());
        }
        if self.input_shape.is_empty() {
            return mismatch("input shape has no elements".into());
        }
        if self.layers.is_empty() {
            return mismatch("head has no layers".into());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.out_width() {
                return mismatch(format!(
                    "layer {i}: bias length {} != weight rows {}",
                    layer.bias.len(),
                    layer.out_width()
                ));
            }
            if layer.out_width() == 0 || layer.in_width() == 0 {
                return mismatch(format!("layer {i}: empty weight matrix"));
            }
            if !layer.is_finite() {
                return Err(HeadSpecError::NonFiniteWeight { layer: i });
            }
        }
        match self.input_shape {
            InputShape::Flat { d } => {
                let mut width = d;
                for (i, layer) in self.layers.iter().enumerate() {
                    if layer.in_width() != width {
                        return mismatch(format!(
                            "layer {i}: input width {} does not chain with {width}",
                            layer.in_width()
                        ));
                    }
                    width = layer.out_width();
                }
                if width != self.num_classes {
                    return mismatch(format!(
                        "last layer emits {width} outputs, num_classes is {}",
                        self.num_classes
                    ));
                }
            }
            InputShape::Spatial { c, .. } => {
                if self.layers.len() != 1 {
                    return mismatch(format!(
                        "conv1x1_gap heads take exactly one layer, got {}",
                        self.layers.len()
                    ));
                }
                let layer = &self.layers[0];
                if layer.weight.dim() != (self.num_classes, c) {
                    return mismatch(format!(
                        "conv weight is {:?}, expected ({}, {c})",
                        layer.weight.dim(),
                        self.num_classes
                    ));
                }
                if layer.activation != Activation::Relu {
                    return mismatch("conv1x1_gap layer must use relu".into());
                }
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn head_kind(&self) -> HeadKind {
        self.input_shape.kind()
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn latent_range(&self) -> &LatentRangeInfo {
        &self.latent_range
    }

    pub fn arch_tag(&self) -> Option<&str> {
        self.arch_tag.as_deref()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, HeadSpecError> {
        let bytes = fs::read(path)?;
        parse_headspec(&bytes)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<(), HeadSpecError> {
        fs::write(path, serialize_headspec(self))?;
        Ok(())
    }
}

// On-disk document layout.

#[derive(Serialize, Deserialize)]
struct HeadDoc {
    format_version: u64,
    model_id: String,
    head_kind: HeadKindDoc,
    input_shape: ShapeDoc,
    num_classes: usize,
    layers: Vec<LayerDoc>,
    latent_range: RangeDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arch_tag: Option<String>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
enum HeadKindDoc {
    #[serde(rename = "fc")]
    Fc,
    #[serde(rename = "conv1x1_gap")]
    Conv1x1Gap,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShapeDoc {
    Spatial { c: usize, h: usize, w: usize },
    Flat { d: usize },
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct RangeDoc {
    min: f64,
    max: f64,
    probe_batch: u64,
}

fn layer_from_doc(i: usize, doc: LayerDoc) -> Result<AffineLayer, HeadSpecError> {
    let rows = doc.weight.len();
    let cols = doc.weight.first().map_or(0, Vec::len);
    if let Some(bad) = doc.weight.iter().position(|r| r.len() != cols) {
        return Err(HeadSpecError::ShapeMismatch(format!(
            "layer {i}: weight row {bad} has {} entries, expected {cols}",
            doc.weight[bad].len()
        )));
    }
    let flat: Vec<f64> = doc.weight.into_iter().flatten().collect();
    let weight = Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| HeadSpecError::ShapeMismatch(format!("layer {i}: {e}")))?;
    Ok(AffineLayer::new(weight, Array1::from(doc.bias), doc.activation))
}

/// Parses and validates a head-spec document.
pub fn parse_headspec(bytes: &[u8]) -> Result<HeadSpec, HeadSpecError> {
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| HeadSpecError::MalformedDocument(e.to_string()))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| HeadSpecError::MalformedDocument("missing field `format_version`".into()))?
        .as_u64()
        .ok_or_else(|| {
            HeadSpecError::MalformedDocument("`format_version` must be a non-negative integer".into())
        })?;
    if version != FORMAT_VERSION {
        return Err(HeadSpecError::UnsupportedVersion(version));
    }
    let doc: HeadDoc = serde_json::from_value(value)
        .map_err(|e| HeadSpecError::MalformedDocument(e.to_string()))?;

    let input_shape = match doc.input_shape {
        ShapeDoc::Flat { d } => InputShape::Flat { d },
        ShapeDoc::Spatial { c, h, w } => InputShape::Spatial { c, h, w },
    };
    let expected_kind = match input_shape.kind() {
        HeadKind::FullyConnected => HeadKindDoc::Fc,
        HeadKind::Conv1x1Gap => HeadKindDoc::Conv1x1Gap,
    };
    if doc.head_kind != expected_kind {
        return Err(HeadSpecError::ShapeMismatch(
            "head_kind does not agree with input_shape".into(),
        ));
    }
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(i, l)| layer_from_doc(i, l))
        .collect::<Result<Vec<_>, _>>()?;
    let range = LatentRangeInfo::new(
        doc.latent_range.min,
        doc.latent_range.max,
        doc.latent_range.probe_batch,
    )?;
    let mut spec = HeadSpec::new(doc.model_id, input_shape, doc.num_classes, layers, range)?;
    spec.arch_tag = doc.arch_tag;
    Ok(spec)
}

/// Canonical document: sorted keys, 17-significant-digit floats, trailing newline.
pub fn serialize_headspec(h: &HeadSpec) -> Vec<u8> {
    let doc = HeadDoc {
        format_version: FORMAT_VERSION,
        model_id: h.model_id.clone(),
        head_kind: match h.head_kind() {
            HeadKind::FullyConnected => HeadKindDoc::Fc,
            HeadKind::Conv1x1Gap => HeadKindDoc::Conv1x1Gap,
        },
        input_shape: match h.input_shape {
            InputShape::Flat { d } => ShapeDoc::Flat { d },
            InputShape::Spatial { c, h, w } => ShapeDoc::Spatial { c, h, w },
        },
        num_classes: h.num_classes,
        layers: h
            .layers
            .iter()
            .map(|l| LayerDoc {
                weight: l.weight.outer_iter().map(|r| r.to_vec()).collect(),
                bias: l.bias.to_vec(),
                activation: l.activation,
            })
            .collect(),
        latent_range: RangeDoc {
            min: h.latent_range.min_val,
            max: h.latent_range.max_val,
            probe_batch: h.latent_range.probe_batch,
        },
        arch_tag: h.arch_tag.clone(),
    };
    let mut text = json::to_canonical_string(&doc).expect("head-spec document is always serializable");
    text.push('\n');
    text.into_bytes()
}
