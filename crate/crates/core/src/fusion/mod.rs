//! Forward-only numeric kernels: gated cross-attention fusion, region query
//! embedding, denoising noise and same-region attention masks.
//!
//! Everything is double precision and allocation-light; parameter sets are
//! immutable once built, so kernels can run from any number of threads.

mod alif;
mod attention;
mod embed;
mod gate;
mod mask;
mod noise;
mod tensors;

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

pub use alif::{alif_layer, AlifConfig, AlifGates, AlifStack, Encoder, Identity, SPARSITY_GRID};
pub use attention::{cross_attend, masked_softmax_rows, CrossAttnOutput, CrossAttnParams};
pub use embed::{embed_region, EmbeddingParams, Linear, RegionQuery};
pub use gate::{apply_gate, GateConfig, GateKind, SeBlock};
pub use mask::{build_denoise_mask, AttentionMask};
pub use noise::{inject_noise, noise_groups, NoiseConfig, NoisedRegion};
pub use tensors::{read_tensors, write_tensors, Tensor, TensorMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tensor file line {line}: {msg}")]
    TensorFile { line: usize, msg: String },
}

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, got: impl ToString) -> FusionError {
    FusionError::Shape {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// A `rows × dim` matrix of finite values, one token per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self, FusionError> {
        let got = values.len();
        let a = Array2::from_shape_vec((rows, dim), values)
            .map_err(|_| shape_err("FeatureMatrix::new", rows * dim, got))?;
        Self::from_array(a)
    }

    pub fn from_array(a: Array2<f64>) -> Result<Self, FusionError> {
        if a.iter().all(|v| v.is_finite()) {
            Ok(Self(a))
        } else {
            Err(FusionError::NonFinite("FeatureMatrix"))
        }
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self(Array2::zeros((rows, dim)))
    }

    /// Entries drawn uniformly from `[-scale, scale)`.
    pub fn random(rows: usize, dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Self(random_matrix(rows, dim, scale, rng))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    pub fn max_abs_diff(&self, other: &FeatureMatrix) -> f64 {
        assert_eq!(self.0.dim(), other.0.dim(), "max_abs_diff shape");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}
