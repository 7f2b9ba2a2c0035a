//! Detection-style evaluation of relation triplets: HOI mAP with a rare /
//! non-rare split and scene-graph recall and weighted mAP.

mod hoi;
mod sgg;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CornerBox;

pub use hoi::{hoi_map, parse_rare_categories, HoiReport};
pub use sgg::{score_wtd, sgg_metrics, topk_per_image, SggReport};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RECALL_K: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("record {index}: confidence {value} outside [0, 1]")]
    Confidence { index: usize, value: f64 },
    #[error("rare category file line {line}: {msg}")]
    RareFile { line: usize, msg: String },
}

fn one() -> f64 {
    1.0
}

/// A scored (or, for ground truth, unscored) relation triplet with corner
/// boxes in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub subject_box: CornerBox,
    pub subject_class: String,
    pub object_box: CornerBox,
    pub object_class: String,
    pub relation: String,
    #[serde(default = "one")]
    pub confidence: f64,
}

pub fn validate_records(records: &[DetectionRecord]) -> Result<(), MetricError> {
    for (index, r) in records.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(MetricError::Confidence {
                index,
                value: r.confidence,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hoi: HoiReport,
    pub sgg: SggReport,
}

/// All-point interpolated average precision of a confidence-ranked list of
/// hit flags. `None` when there is no ground truth.
pub fn average_precision(hits: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut next_recall = points.last().map_or(0.0, |p| p.0);
    for &(recall, precision) in points.iter().rev() {
        ap += (next_recall - recall) * envelope;
        envelope = envelope.max(precision);
        next_recall = recall;
    }
    ap += next_recall * envelope;
    Some(ap)
}

/// Indices of `conf` sorted by descending confidence, ties by index.
pub(crate) fn ranked(conf: impl Iterator<Item = f64>) -> Vec<usize> {
    let c: Vec<f64> = conf.collect();
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&a, &b| c[b].total_cmp(&c[a]));
    idx
}

/// One-to-one greedy matching of ranked predictions against ground truth in
/// the same image. `quality` returns `Some(q)` when a prediction may claim a
/// ground truth; the unclaimed candidate with the highest `q` wins, ties to
/// the lower index. Returns hit flags in ranked order.
pub(crate) fn greedy_hits<'a>(
    preds: &[&'a DetectionRecord],
    gts: &[&'a DetectionRecord],
    quality: impl Fn(&DetectionRecord, &DetectionRecord) -> Option<f64>,
) -> Vec<bool> {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut claimed = vec![false; gts.len()];
    ranked(preds.iter().map(|p| p.confidence))
        .into_iter()
        .map(|pi| {
            let p = preds[pi];
            let mut best: Option<(f64, usize)> = None;
            for &gi in by_image.get(p.image_id.as_str()).map_or(&[][..], Vec::as_slice) {
                if claimed[gi] {
                    continue;
                }
                if let Some(q) = quality(p, gts[gi]) {
                    if best.is_none_or(|(bq, _)| q > bq) {
                        best = Some((q, gi));
                    }
                }
            }
            match best {
                Some((_, gi)) => {
                    claimed[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Groups record references by `key`, keeping input order within groups.
pub(crate) fn group_by<K: Ord>(
    records: &[DetectionRecord],
    key: impl Fn(&DetectionRecord) -> K,
) -> BTreeMap<K, Vec<&DetectionRecord>> {
    let mut out: BTreeMap<K, Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r);
    }
    out
}

pub fn evaluate(
    preds: &[DetectionRecord],
    gts: &[DetectionRecord],
    rare: &BTreeSet<(String, String)>,
    k: usize,
) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        hoi: hoi_map(preds, gts, rare, DEFAULT_IOU_THRESHOLD)?,
        sgg: sgg_metrics(preds, gts, k)?,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        let v = average_precision(&[true, false, true], 2).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[], 2), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[false, false], 3), Some(0.0));
        // Envelope lifts an early low-precision stretch.
        let v = average_precision(&[false, true, true], 2).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ranked_is_stable() {
        assert_eq!(ranked([0.5, 0.9, 0.5, 0.9].into_iter()), vec![1, 3, 0, 2]);
    }

    #[test]
    fn record_json() {
        let r = test_support::rec("i", [0., 0., 0.5, 0.5], "person", [0.2, 0.2, 0.9, 0.9], "horse", "ride", 0.7);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<DetectionRecord>(&s).unwrap(), r);
        let no_conf = r#"{"image_id":"i","subject_box":[0,0,1,1],"subject_class":"a","object_box":[0,0,1,1],"object_class":"b","relation":"r"}"#;
        assert_eq!(serde_json::from_str::<DetectionRecord>(no_conf).unwrap().confidence, 1.0);
        assert!(validate_records(&[DetectionRecord { confidence: 1.5, ..r }]).is_err());
    }
}
