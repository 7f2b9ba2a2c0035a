//! Asymmetric fusion stack: each layer cross-attends the two modalities,
//! adds the gated aggregates back residually, then runs `n_v` vision
//! encoder applications but only one language encoder application.

use super::{apply_gate, cross_attend, CrossAttnParams, FeatureMatrix, FusionError, GateConfig};

/// The four `(n_v, n_alif)` settings with six vision encoder applications.
pub const SPARSITY_GRID: [(usize, usize); 4] = [(1, 6), (2, 3), (3, 2), (6, 1)];

/// A single-modality encoder layer. Neural encoders are out of scope; the
/// stack only relies on this interface.
pub trait Encoder {
    fn encode(&self, x: &FeatureMatrix) -> FeatureMatrix;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Encoder for Identity {
    fn encode(&self, x: &FeatureMatrix) -> FeatureMatrix {
        x.clone()
    }
}

impl<F: Fn(&FeatureMatrix) -> FeatureMatrix> Encoder for F {
    fn encode(&self, x: &FeatureMatrix) -> FeatureMatrix {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlifConfig {
    /// Vision encoder applications per layer.
    pub n_v: usize,
    /// Number of stacked layers.
    pub n_alif: usize,
}

impl Default for AlifConfig {
    fn default() -> Self {
        Self { n_v: 2, n_alif: 3 }
    }
}

impl AlifConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.n_v == 0 || self.n_alif == 0 {
            return Err(FusionError::Config("n_v and n_alif must be positive".into()));
        }
        Ok(())
    }

    /// Checks membership of the six-application sparsification grid.
    pub fn validate_grid(&self) -> Result<(), FusionError> {
        self.validate()?;
        if self.n_v * self.n_alif != 6 {
            return Err(FusionError::Config(format!(
                "n_v * n_alif must be 6, got {} * {}",
                self.n_v, self.n_alif
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlifGates {
    pub vision: GateConfig,
    pub language: GateConfig,
}

impl AlifGates {
    pub fn scalar(alpha: f64) -> Self {
        Self {
            vision: GateConfig::scalar(alpha),
            language: GateConfig::scalar(alpha),
        }
    }
}

/// One fusion layer:
/// `C' = Enc_v^{n_v}(C + G(C~))`, `L' = Enc_l(L + G(L~))`.
pub fn alif_layer(
    c: &FeatureMatrix,
    l: &FeatureMatrix,
    params: &CrossAttnParams,
    gates: &AlifGates,
    n_v: usize,
    vision_encoder: &dyn Encoder,
    language_encoder: &dyn Encoder,
) -> Result<(FeatureMatrix, FeatureMatrix), FusionError> {
    let fused = cross_attend(c, l, params, None)?;
    let gv = apply_gate(&fused.vision, &gates.vision)?;
    let gl = apply_gate(&fused.language, &gates.language)?;

    let mut cv = FeatureMatrix::from_array(c.as_array() + gv.as_array())?;
    for _ in 0..n_v {
        cv = vision_encoder.encode(&cv);
    }
    let lv = FeatureMatrix::from_array(l.as_array() + gl.as_array())?;
    let lv = language_encoder.encode(&lv);
    Ok((cv, lv))
}

/// `n_alif` stacked layers, each with its own projections and gates.
#[derive(Debug, Clone)]
pub struct AlifStack {
    pub config: AlifConfig,
    pub layers: Vec<(CrossAttnParams, AlifGates)>,
}

impl AlifStack {
    pub fn new(config: AlifConfig, layers: Vec<(CrossAttnParams, AlifGates)>) -> Result<Self, FusionError> {
        config.validate()?;
        if layers.len() != config.n_alif {
            return Err(FusionError::Config(format!(
                "expected {} layers, got {}",
                config.n_alif,
                layers.len()
            )));
        }
        Ok(Self { config, layers })
    }

    /// Same projections and gates in every layer.
    pub fn uniform(config: AlifConfig, params: CrossAttnParams, gates: AlifGates) -> Result<Self, FusionError> {
        Self::new(config, vec![(params, gates); config.n_alif])
    }

    pub fn forward(
        &self,
        c: &FeatureMatrix,
        l: &FeatureMatrix,
        vision_encoder: &dyn Encoder,
        language_encoder: &dyn Encoder,
    ) -> Result<(FeatureMatrix, FeatureMatrix), FusionError> {
        let mut state = (c.clone(), l.clone());
        for (params, gates) in &self.layers {
            state = alif_layer(
                &state.0,
                &state.1,
                params,
                gates,
                self.config.n_v,
                vision_encoder,
                language_encoder,
            )?;
        }
        Ok(state)
    }
}
