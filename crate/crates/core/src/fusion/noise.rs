use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Scale of center shifting and box scaling, in `[0, 1)`.
    pub box_scale: f64,
    /// Probability of replacing a label with a different class.
    pub label_flip_prob: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            box_scale: 0.4,
            label_flip_prob: 0.2,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..1.0).contains(&self.box_scale) {
            return Err(FusionError::Config(format!(
                "box_scale must be in [0, 1), got {}",
                self.box_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(FusionError::Config(format!(
                "label_flip_prob must be in [0, 1], got {}",
                self.label_flip_prob
            )));
        }
        Ok(())
    }
}

/// Perturbs a ground-truth box and label.
///
/// With `s = box_scale`: `cx += U(-s·w/2, s·w/2)`, `cy += U(-s·h/2, s·h/2)`,
/// `w' = U((1-s)w, (1+s)w)`, `h'` likewise. With probability
/// `label_flip_prob` the label is replaced by a uniformly drawn different
/// class. Zero scales draw nothing from `rng`.
pub fn inject_noise(
    bbox: &BoundingBox,
    label: usize,
    vocab_size: usize,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<(BoundingBox, usize), FusionError> {
    cfg.validate()?;
    if label >= vocab_size {
        return Err(FusionError::Config(format!(
            "label {label} outside vocabulary of {vocab_size}"
        )));
    }
    let s = cfg.box_scale;
    let noised = if s > 0.0 {
        let (w, h) = (bbox.w(), bbox.h());
        let dx = rng.gen_range(-1.0..=1.0) * s * w / 2.0;
        let dy = rng.gen_range(-1.0..=1.0) * s * h / 2.0;
        let w2 = w * (1.0 + s * rng.gen_range(-1.0..=1.0));
        let h2 = h * (1.0 + s * rng.gen_range(-1.0..=1.0));
        BoundingBox::new(bbox.cx() + dx, bbox.cy() + dy, w2, h2)
            .map_err(|_| FusionError::NonFinite("noised box"))?
    } else {
        *bbox
    };
    let mut out_label = label;
    if cfg.label_flip_prob > 0.0 && vocab_size > 1 && rng.gen_bool(cfg.label_flip_prob) {
        let r = rng.gen_range(0..vocab_size - 1);
        out_label = if r >= label { r + 1 } else { r };
    }
    Ok((noised, out_label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisedRegion {
    pub region_id: String,
    pub group_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: usize,
}

/// `n_groups` independently noised replicas of every region, group-major.
pub fn noise_groups(
    regions: &[(String, BoundingBox, usize)],
    n_groups: usize,
    vocab_size: usize,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<Vec<NoisedRegion>, FusionError> {
    let mut out = Vec::with_capacity(regions.len() * n_groups);
    for g in 0..n_groups {
        for (id, b, label) in regions {
            let (bbox, label) = inject_noise(b, *label, vocab_size, cfg, rng)?;
            out.push(NoisedRegion {
                region_id: id.clone(),
                group_index: g,
                bbox,
                label,
            });
        }
    }
    Ok(out)
}
