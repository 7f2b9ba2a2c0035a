use serde::{Deserialize, Serialize};

use super::{GroundTruthTriplet, MatchError, PredictedTriplet};
use crate::geometry::{giou, BoundingBox};

/// Floor applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

fn ln_clamped(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// λ1 (L1), λ2 (GIoU), λ3 (subject + object CE), λ4 (relation focal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    pub ce: f64,
    pub focal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 2.5,
            giou: 1.0,
            ce: 1.0,
            focal: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MatchError> {
        for v in [self.l1, self.giou, self.ce, self.focal] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MatchError::Invalid(format!("loss weights must be non-negative: {self:?}")));
            }
        }
        Ok(())
    }
}

/// `gamma` is the focusing exponent. `alpha` weights positives by `α` and
/// negatives by `1 − α`; `None` leaves both unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: Option<f64>,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: Some(0.25),
        }
    }
}

pub fn l1_loss(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    pred.to_array()
        .iter()
        .zip(gt.to_array())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

pub fn giou_loss(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    1.0 - giou(&pred.to_corner(), &gt.to_corner())
}

/// `−ln dist[class]`.
pub fn ce_loss(dist: &[f64], class: usize) -> Result<f64, MatchError> {
    dist.get(class)
        .map(|&p| -ln_clamped(p))
        .ok_or_else(|| MatchError::Invalid(format!("class {class} outside distribution of {}", dist.len())))
}

/// Sigmoid focal loss summed over relation classes.
pub fn focal_loss(probs: &[f64], targets: &[bool], params: &FocalParams) -> Result<f64, MatchError> {
    if probs.len() != targets.len() {
        return Err(MatchError::Invalid(format!(
            "{} relation probabilities for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    Ok(probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let pt = if t { p } else { 1.0 - p };
            let at = match params.alpha {
                Some(a) if t => a,
                Some(a) => 1.0 - a,
                None => 1.0,
            };
            -at * (1.0 - pt).powf(params.gamma) * ln_clamped(pt)
        })
        .sum())
}

/// Binary cross-entropy summed over classes.
pub fn bce_loss(probs: &[f64], targets: &[bool]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| if t { -ln_clamped(p) } else { -ln_clamped(1.0 - p) })
        .sum()
}

fn rel_targets(gt: &GroundTruthTriplet, n: usize) -> Result<Vec<bool>, MatchError> {
    let mut t = vec![false; n];
    for &r in &gt.rel_classes {
        *t.get_mut(r)
            .ok_or_else(|| MatchError::Invalid(format!("relation {r} outside {n} classes")))? = true;
    }
    Ok(t)
}

/// Weighted sum of box, class and relation losses for one matched pair.
pub fn triplet_cost(
    pred: &PredictedTriplet,
    gt: &GroundTruthTriplet,
    w: &LossWeights,
    focal: &FocalParams,
) -> Result<f64, MatchError> {
    let l1 = l1_loss(&pred.sub_box, &gt.sub_box) + l1_loss(&pred.obj_box, &gt.obj_box);
    let g = giou_loss(&pred.sub_box, &gt.sub_box) + giou_loss(&pred.obj_box, &gt.obj_box);
    let ce = ce_loss(&pred.sub_dist, gt.sub_class)? + ce_loss(&pred.obj_dist, gt.obj_class)?;
    let f = focal_loss(&pred.rel_probs, &rel_targets(gt, pred.rel_probs.len())?, focal)?;
    Ok(w.l1 * l1 + w.giou * g + w.ce * ce + w.focal * f)
}

/// Classification cost of an unmatched prediction: CE of both
/// distributions against their last (no-object) index.
pub fn no_object_cost(pred: &PredictedTriplet, w: &LossWeights) -> f64 {
    let last = |d: &[f64]| -ln_clamped(*d.last().expect("validated non-empty"));
    w.ce * (last(&pred.sub_dist) + last(&pred.obj_dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn l1_examples() {
        let a = bb(0.5, 0.5, 0.2, 0.2);
        let b = bb(0.6, 0.5, 0.2, 0.2);
        assert_eq!(l1_loss(&a, &a), 0.0);
        assert!((l1_loss(&a, &b) - 0.1).abs() < 1e-15);
        assert_eq!(l1_loss(&a, &b), l1_loss(&b, &a));
    }

    #[test]
    fn giou_loss_examples() {
        let a = bb(0.5, 0.5, 1.0, 1.0);
        let b = bb(2.5, 0.5, 1.0, 1.0);
        assert_eq!(giou_loss(&a, &a), 0.0);
        assert!((giou_loss(&a, &b) - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ce_examples() {
        assert_eq!(ce_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((ce_loss(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(ce_loss(&[0.5, 0.5], 1).unwrap() < ce_loss(&[0.7, 0.3], 1).unwrap());
        assert!((ce_loss(&[1.0, 0.0], 1).unwrap() + LOG_FLOOR.ln()).abs() < 1e-12);
        assert!(ce_loss(&[1.0], 3).is_err());
    }

    #[test]
    fn focal_examples() {
        let v = focal_loss(&[0.9], &[true], &FocalParams::default()).unwrap();
        let expected = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() / 2.634e-4 < 0.01);
        let perfect = focal_loss(&[1.0, 0.0, 1.0], &[true, false, true], &FocalParams::default()).unwrap();
        assert!(perfect < 1e-10);
        assert!(focal_loss(&[0.5], &[true, false], &FocalParams::default()).is_err());
    }

    #[test]
    fn focal_reduces_to_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = FocalParams {
            gamma: 0.0,
            alpha: None,
        };
        for _ in 0..1000 {
            let n = rng.gen_range(1..10);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let t: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            assert!((focal_loss(&probs, &t, &p).unwrap() - bce_loss(&probs, &t)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { l1: -1.0, ..Default::default() }.validate().is_err());
    }
}
