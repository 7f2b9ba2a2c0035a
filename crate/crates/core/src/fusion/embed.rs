use ndarray::{concatenate, Array1, Array2, Axis};
use rand::Rng;

use super::{random_matrix, shape_err, FusionError};
use crate::geometry::BoundingBox;

/// `y = x W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self, FusionError> {
        if bias.len() != weight.ncols() {
            return Err(shape_err("Linear bias", weight.ncols(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (input as f64).sqrt();
        Self {
            weight: random_matrix(input, output, s, rng),
            bias: Array1::from_shape_simple_fn(output, || rng.gen_range(-s..s)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>, FusionError> {
        if x.len() != self.input_dim() {
            return Err(shape_err("Linear input", self.input_dim(), x.len()));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }
}

/// Projections turning a labelled box into a decoder query: position
/// `(cx, cy, w, h) → d`, label feature `→ d`, then the concatenation
/// `2d → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub position: Linear,
    pub label: Linear,
    pub fuse: Linear,
}

impl EmbeddingParams {
    pub const DEFAULT_LABEL_DIM: usize = 768;
    pub const DEFAULT_MODEL_DIM: usize = 256;

    pub fn new(position: Linear, label: Linear, fuse: Linear) -> Result<Self, FusionError> {
        let d = position.output_dim();
        if position.input_dim() != 4 {
            return Err(shape_err("position projection input", 4, position.input_dim()));
        }
        if label.output_dim() != d {
            return Err(shape_err("label projection output", d, label.output_dim()));
        }
        if fuse.input_dim() != 2 * d || fuse.output_dim() != d {
            return Err(shape_err(
                "fuse projection",
                format!("{}x{d}", 2 * d),
                format!("{}x{}", fuse.input_dim(), fuse.output_dim()),
            ));
        }
        Ok(Self { position, label, fuse })
    }

    pub fn zeros(label_dim: usize, d_model: usize) -> Self {
        Self {
            position: Linear::zeros(4, d_model),
            label: Linear::zeros(label_dim, d_model),
            fuse: Linear::zeros(2 * d_model, d_model),
        }
    }

    pub fn random(label_dim: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        Self {
            position: Linear::random(4, d_model, rng),
            label: Linear::random(label_dim, d_model, rng),
            fuse: Linear::random(2 * d_model, d_model, rng),
        }
    }

    pub fn label_dim(&self) -> usize {
        self.label.input_dim()
    }

    pub fn model_dim(&self) -> usize {
        self.fuse.output_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionQuery {
    pub region_id: String,
    pub embedding: Array1<f64>,
    /// Index of the noise replica this query belongs to.
    pub group_index: usize,
}

pub fn embed_region(
    region_id: &str,
    bbox: &BoundingBox,
    label_feature: &[f64],
    proj: &EmbeddingParams,
    group_index: usize,
) -> Result<RegionQuery, FusionError> {
    let pos = proj.position.forward(&Array1::from(bbox.to_array().to_vec()))?;
    let lab = proj.label.forward(&Array1::from(label_feature.to_vec()))?;
    let cat = concatenate(Axis(0), &[pos.view(), lab.view()]).expect("equal-rank vectors");
    let embedding = proj.fuse.forward(&cat)?;
    if !embedding.iter().all(|v| v.is_finite()) {
        return Err(FusionError::NonFinite("region embedding"));
    }
    Ok(RegionQuery {
        region_id: region_id.to_string(),
        embedding,
        group_index,
    })
}
