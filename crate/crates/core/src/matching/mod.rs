//! Set-prediction matching for relation triplets: optimal assignment and the
//! composite box/class/relation loss evaluated on it.

mod hungarian;
mod losses;

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

pub use hungarian::{hungarian, MatchResult};
pub use losses::{
    bce_loss, ce_loss, focal_loss, giou_loss, l1_loss, no_object_cost, triplet_cost, FocalParams,
    LossWeights, LOG_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// A decoded triplet. The class distributions carry one extra trailing
/// entry for "no object".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTriplet {
    pub sub_box: BoundingBox,
    pub obj_box: BoundingBox,
    pub sub_dist: Vec<f64>,
    pub obj_dist: Vec<f64>,
    pub rel_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTriplet {
    pub sub_box: BoundingBox,
    pub obj_box: BoundingBox,
    pub sub_class: usize,
    pub obj_class: usize,
    pub rel_classes: BTreeSet<usize>,
}

const DIST_TOL: f64 = 1e-9;

impl PredictedTriplet {
    pub fn validate(&self) -> Result<(), MatchError> {
        for (name, d) in [("sub_dist", &self.sub_dist), ("obj_dist", &self.obj_dist)] {
            if d.len() < 2 {
                return Err(MatchError::Invalid(format!("{name} needs at least one class plus no-object")));
            }
            if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > DIST_TOL {
                return Err(MatchError::Invalid(format!("{name} is not a probability vector")));
            }
        }
        if self.rel_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(MatchError::Invalid("rel_probs outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Entity classes excluding the no-object entry.
    pub fn n_classes(&self) -> usize {
        self.sub_dist.len() - 1
    }
}

impl GroundTruthTriplet {
    pub fn validate(&self, n_classes: usize, n_relations: usize) -> Result<(), MatchError> {
        if self.sub_class >= n_classes || self.obj_class >= n_classes {
            return Err(MatchError::Invalid(format!(
                "class index outside vocabulary of {n_classes}"
            )));
        }
        if self.rel_classes.is_empty() {
            return Err(MatchError::Invalid("rel_classes is empty".into()));
        }
        if self.rel_classes.iter().any(|&r| r >= n_relations) {
            return Err(MatchError::Invalid(format!(
                "relation index outside vocabulary of {n_relations}"
            )));
        }
        Ok(())
    }
}

fn validate_all(preds: &[PredictedTriplet], gts: &[GroundTruthTriplet]) -> Result<(), MatchError> {
    for p in preds {
        p.validate()?;
    }
    if let Some(first) = preds.first() {
        for p in preds {
            if p.sub_dist.len() != first.sub_dist.len()
                || p.obj_dist.len() != first.sub_dist.len()
                || p.rel_probs.len() != first.rel_probs.len()
            {
                return Err(MatchError::Invalid("predictions disagree on vocabulary sizes".into()));
            }
        }
        for g in gts {
            g.validate(first.n_classes(), first.rel_probs.len())?;
        }
    }
    Ok(())
}

/// Cost of pairing each prediction with each ground truth, offset by the
/// prediction's no-object cost so that the assignment minimum plus
/// `Σ no_object_cost` is the total loss.
pub fn matching_cost(
    preds: &[PredictedTriplet],
    gts: &[GroundTruthTriplet],
    w: &LossWeights,
    focal: &FocalParams,
) -> Result<Array2<f64>, MatchError> {
    w.validate()?;
    validate_all(preds, gts)?;
    let rows: Vec<Vec<f64>> = preds
        .par_iter()
        .map(|p| {
            let base = no_object_cost(p, w);
            gts.iter()
                .map(|g| Ok(triplet_cost(p, g, w, focal)? - base))
                .collect::<Result<_, MatchError>>()
        })
        .collect::<Result<_, _>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((preds.len(), gts.len()), flat).expect("rows have gts.len() entries"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub matching: MatchResult,
    /// Sum of triplet costs over matched pairs.
    pub matched: f64,
    /// No-object classification cost of unmatched predictions.
    pub unmatched: f64,
    pub total: f64,
}

pub fn evaluate_loss(
    preds: &[PredictedTriplet],
    gts: &[GroundTruthTriplet],
    w: &LossWeights,
    focal: &FocalParams,
) -> Result<LossReport, MatchError> {
    let cost = matching_cost(preds, gts, w, focal)?;
    let matching = hungarian(&cost)?;
    let mut matched_rows = vec![false; preds.len()];
    let mut matched = 0.0;
    for &(i, j) in &matching.assignment {
        matched_rows[i] = true;
        matched += triplet_cost(&preds[i], &gts[j], w, focal)?;
    }
    let unmatched = preds
        .iter()
        .zip(&matched_rows)
        .filter(|(_, m)| !**m)
        .map(|(p, _)| no_object_cost(p, w))
        .sum::<f64>();
    Ok(LossReport {
        matching,
        matched,
        unmatched,
        total: matched + unmatched,
    })
}

/// Loss over the optimal prediction-to-ground-truth assignment.
pub fn total_loss(
    preds: &[PredictedTriplet],
    gts: &[GroundTruthTriplet],
    w: &LossWeights,
    focal: &FocalParams,
) -> Result<f64, MatchError> {
    evaluate_loss(preds, gts, w, focal).map(|r| r.total)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    fn dist(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn bbox(rng: &mut impl Rng) -> BoundingBox {
        BoundingBox::new(
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
        )
        .unwrap()
    }

    pub fn random_pred(classes: usize, rels: usize, rng: &mut impl Rng) -> PredictedTriplet {
        PredictedTriplet {
            sub_box: bbox(rng),
            obj_box: bbox(rng),
            sub_dist: dist(classes + 1, rng),
            obj_dist: dist(classes + 1, rng),
            rel_probs: (0..rels).map(|_| rng.gen_range(0.0..1.0)).collect(),
        }
    }

    pub fn random_gt(classes: usize, rels: usize, rng: &mut impl Rng) -> GroundTruthTriplet {
        let mut rel_classes = BTreeSet::new();
        rel_classes.insert(rng.gen_range(0..rels));
        if rng.gen_bool(0.3) {
            rel_classes.insert(rng.gen_range(0..rels));
        }
        GroundTruthTriplet {
            sub_box: bbox(rng),
            obj_box: bbox(rng),
            sub_class: rng.gen_range(0..classes),
            obj_class: rng.gen_range(0..classes),
            rel_classes,
        }
    }
}
