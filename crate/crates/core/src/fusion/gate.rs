use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{random_matrix, shape_err, FeatureMatrix, FusionError};

/// Squeeze-and-excitation over token sequences: the squeeze is the mean of
/// each channel across rows, followed by `dim → dim/r` (ReLU) and
/// `dim/r → dim` (sigmoid) projections.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock {
    down: Array2<f64>,
    down_bias: Array1<f64>,
    up: Array2<f64>,
    up_bias: Array1<f64>,
}

impl SeBlock {
    pub const DEFAULT_REDUCTION: usize = 4;

    pub fn new(
        down: Array2<f64>,
        down_bias: Array1<f64>,
        up: Array2<f64>,
        up_bias: Array1<f64>,
    ) -> Result<Self, FusionError> {
        let (dim, hidden) = down.dim();
        if hidden == 0 || up.dim() != (hidden, dim) || down_bias.len() != hidden || up_bias.len() != dim {
            return Err(shape_err(
                "SeBlock",
                format!("down {dim}x{hidden}, up {hidden}x{dim}"),
                format!("down {:?}, up {:?}", down.dim(), up.dim()),
            ));
        }
        Ok(Self {
            down,
            down_bias,
            up,
            up_bias,
        })
    }

    pub fn random(dim: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self, FusionError> {
        if reduction == 0 || !dim.is_multiple_of(reduction) || dim < reduction {
            return Err(FusionError::Config(format!(
                "SE reduction {reduction} must divide dim {dim}"
            )));
        }
        let hidden = dim / reduction;
        let s = 1.0 / (dim as f64).sqrt();
        Self::new(
            random_matrix(dim, hidden, s, rng),
            Array1::zeros(hidden),
            random_matrix(hidden, dim, s, rng),
            Array1::zeros(dim),
        )
    }

    pub fn dim(&self) -> usize {
        self.down.nrows()
    }

    /// Per-channel excitation in (0, 1).
    pub fn excitation(&self, x: &Array2<f64>) -> Array1<f64> {
        let squeeze = x
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(x.ncols()));
        let hidden = (squeeze.dot(&self.down) + &self.down_bias).mapv(|v| v.max(0.0));
        (hidden.dot(&self.up) + &self.up_bias).mapv(sigmoid)
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    Scalar(f64),
    Vector(Array1<f64>),
    Se(SeBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    pub kind: GateKind,
    /// Squash the gated output with `tanh`.
    pub use_tanh: bool,
}

impl GateConfig {
    pub fn scalar(alpha: f64) -> Self {
        Self {
            kind: GateKind::Scalar(alpha),
            use_tanh: false,
        }
    }

    pub fn vector(a: Vec<f64>) -> Self {
        Self {
            kind: GateKind::Vector(Array1::from(a)),
            use_tanh: false,
        }
    }

    pub fn se(block: SeBlock) -> Self {
        Self {
            kind: GateKind::Se(block),
            use_tanh: false,
        }
    }

    pub fn with_tanh(mut self, on: bool) -> Self {
        self.use_tanh = on;
        self
    }
}

pub fn apply_gate(x: &FeatureMatrix, g: &GateConfig) -> Result<FeatureMatrix, FusionError> {
    let a = x.as_array();
    let mut out = match &g.kind {
        GateKind::Scalar(alpha) => a * *alpha,
        GateKind::Vector(v) => {
            if v.len() != x.dim() {
                return Err(shape_err("vector gate", x.dim(), v.len()));
            }
            a * v
        }
        GateKind::Se(se) => {
            if se.dim() != x.dim() {
                return Err(shape_err("SE gate", x.dim(), se.dim()));
            }
            a * &se.excitation(a)
        }
    };
    if g.use_tanh {
        out.mapv_inplace(f64::tanh);
    }
    FeatureMatrix::from_array(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x(seed: u64) -> FeatureMatrix {
        FeatureMatrix::random(5, 8, 3.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn scalar_zero_and_identity() {
        let m = x(1);
        let z = apply_gate(&m, &GateConfig::scalar(0.0)).unwrap();
        assert!(z.as_array().iter().all(|v| *v == 0.0));
        assert_eq!(apply_gate(&m, &GateConfig::scalar(1.0)).unwrap(), m);
    }

    #[test]
    fn tanh_range() {
        let m = FeatureMatrix::random(4, 8, 5.0, &mut ChaCha8Rng::seed_from_u64(2));
        for g in [
            GateConfig::scalar(3.0),
            GateConfig::vector(vec![2.0; 8]),
        ] {
            let out = apply_gate(&m, &g.with_tanh(true)).unwrap();
            assert!(out.as_array().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn vector_gate_scales_channels() {
        let m = x(3);
        let a: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let out = apply_gate(&m, &GateConfig::vector(a.clone())).unwrap();
        for r in 0..5 {
            for (c, ac) in a.iter().enumerate() {
                assert_eq!(out.get(r, c), m.get(r, c) * ac);
            }
        }
        assert!(apply_gate(&m, &GateConfig::vector(vec![1.0; 3])).is_err());
    }

    #[test]
    fn se_reduction_must_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SeBlock::random(10, 4, &mut rng).is_err());
        assert!(SeBlock::random(8, 4, &mut rng).is_ok());
    }

    proptest! {
        #[test]
        fn scalar_gate_is_linear(seed in 0u64..1000, alpha in -5.0..5.0f64, k in -3.0..3.0f64) {
            let (a, b) = (x(seed), x(seed + 1));
            let g = GateConfig::scalar(alpha);
            let sum = FeatureMatrix::from_array(a.as_array() + b.as_array()).unwrap();
            let lhs = apply_gate(&sum, &g).unwrap();
            let rhs = FeatureMatrix::from_array(apply_gate(&a, &g).unwrap().into_array() + apply_gate(&b, &g).unwrap().as_array()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            let scaled = FeatureMatrix::from_array(a.as_array() * k).unwrap();
            let lhs = apply_gate(&scaled, &g).unwrap();
            let rhs = FeatureMatrix::from_array(apply_gate(&a, &g).unwrap().into_array() * k).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn se_never_amplifies(seed in 0u64..1000, tanh in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let se = SeBlock::random(8, 4, &mut rng).unwrap();
            let m = x(seed);
            let out = apply_gate(&m, &GateConfig::se(se).with_tanh(tanh)).unwrap();
            for (o, i) in out.as_array().iter().zip(m.as_array().iter()) {
                prop_assert!(o.abs() <= i.abs());
            }
        }
    }
}
