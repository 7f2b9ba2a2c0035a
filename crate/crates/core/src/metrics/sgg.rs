use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{average_precision, greedy_hits, group_by, mean, ranked, validate_records, DetectionRecord, MetricError};
use crate::geometry::{iou, union_box};

/// Scene-graph metrics in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SggReport {
    pub r50: f64,
    pub mr50: f64,
    pub wmap_rel: f64,
    pub wmap_phr: f64,
    pub score_wtd: f64,
    /// Top-k cutoff used for the recall figures.
    pub k: usize,
}

pub fn score_wtd(r50: f64, wmap_rel: f64, wmap_phr: f64) -> f64 {
    0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr
}

/// The `k` most confident records of each image, ties by input order;
/// output keeps image order of first appearance.
pub fn topk_per_image(records: &[DetectionRecord], k: usize) -> Vec<DetectionRecord> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_image: BTreeMap<&str, Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        let e = by_image.entry(r.image_id.as_str()).or_default();
        if e.is_empty() {
            order.push(r.image_id.as_str());
        }
        e.push(r);
    }
    let mut out = Vec::new();
    for id in order {
        let rs = &by_image[id];
        for i in ranked(rs.iter().map(|r| r.confidence)).into_iter().take(k) {
            out.push(rs[i].clone());
        }
    }
    out
}

fn labels_match(p: &DetectionRecord, g: &DetectionRecord) -> bool {
    p.subject_class == g.subject_class && p.object_class == g.object_class && p.relation == g.relation
}

fn triplet_quality(p: &DetectionRecord, g: &DetectionRecord) -> Option<f64> {
    if !labels_match(p, g) {
        return None;
    }
    let s = iou(&p.subject_box, &g.subject_box);
    let o = iou(&p.object_box, &g.object_box);
    (s >= 0.5 && o >= 0.5).then_some(s.min(o))
}

fn phrase_quality(p: &DetectionRecord, g: &DetectionRecord) -> Option<f64> {
    if !labels_match(p, g) {
        return None;
    }
    let u = iou(
        &union_box(&p.subject_box, &p.object_box),
        &union_box(&g.subject_box, &g.object_box),
    );
    (u >= 0.5).then_some(u)
}

fn weighted_map(
    preds: &BTreeMap<String, Vec<&DetectionRecord>>,
    gts: &BTreeMap<String, Vec<&DetectionRecord>>,
    quality: fn(&DetectionRecord, &DetectionRecord) -> Option<f64>,
) -> f64 {
    let n: usize = gts.values().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    gts.iter()
        .map(|(rel, g)| {
            let p = preds.get(rel).map_or(&[][..], Vec::as_slice);
            let ap = average_precision(&greedy_hits(p, g, quality), g.len()).expect("non-empty");
            ap * g.len() as f64 / n as f64
        })
        .sum::<f64>()
        * 100.0
}

/// Recall at `k` per image, mean per-relation recall at `k`, and
/// instance-weighted relation and phrase mAP over all predictions.
///
/// A ground truth counts as recalled when any of its image's top-`k`
/// predictions matches all three labels with both boxes at IoU ≥ 0.5.
pub fn sgg_metrics(preds: &[DetectionRecord], gts: &[DetectionRecord], k: usize) -> Result<SggReport, MetricError> {
    validate_records(preds)?;
    let top = topk_per_image(preds, k);
    let top_by_image = group_by(&top, |r| r.image_id.clone());
    let mut per_rel: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut hits = 0usize;
    for g in gts {
        let hit = top_by_image
            .get(&g.image_id)
            .is_some_and(|ps| ps.iter().any(|p| triplet_quality(p, g).is_some()));
        let e = per_rel.entry(g.relation.as_str()).or_default();
        e.1 += 1;
        if hit {
            e.0 += 1;
            hits += 1;
        }
    }
    let r50 = if gts.is_empty() {
        0.0
    } else {
        hits as f64 / gts.len() as f64 * 100.0
    };
    let recalls: Vec<f64> = per_rel.values().map(|&(h, n)| h as f64 / n as f64 * 100.0).collect();
    let mr50 = mean(&recalls);
    let pred_groups = group_by(preds, |r| r.relation.clone());
    let gt_groups = group_by(gts, |r| r.relation.clone());
    let wmap_rel = weighted_map(&pred_groups, &gt_groups, triplet_quality);
    let wmap_phr = weighted_map(&pred_groups, &gt_groups, phrase_quality);
    Ok(SggReport {
        r50,
        mr50,
        wmap_rel,
        wmap_phr,
        score_wtd: score_wtd(r50, wmap_rel, wmap_phr),
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::rec;
    use super::*;

    const A: [f64; 4] = [0.0, 0.0, 0.4, 0.4];
    const B: [f64; 4] = [0.3, 0.3, 0.9, 0.9];
    const C: [f64; 4] = [0.6, 0.0, 1.0, 0.3];

    fn gts() -> Vec<DetectionRecord> {
        vec![
            rec("1", A, "man", B, "horse", "on", 1.0),
            rec("1", A, "man", C, "hat", "wears", 1.0),
            rec("2", B, "dog", A, "ball", "on", 1.0),
        ]
    }

    #[test]
    fn score_wtd_formula() {
        let v = score_wtd(65.99, 49.54, 45.71);
        assert!((v - 51.30).abs() < 0.005);
        assert!((v - 51.298).abs() < 1e-9);
    }

    #[test]
    fn perfect() {
        let r = sgg_metrics(&gts(), &gts(), 50).unwrap();
        assert_eq!((r.r50, r.mr50, r.wmap_rel, r.wmap_phr), (100.0, 100.0, 100.0, 100.0));
        assert!((r.score_wtd - 100.0).abs() < 1e-9);
    }

    #[test]
    fn recall_cutoff_and_labels() {
        let mut preds = vec![rec("1", A, "man", B, "horse", "near", 0.9)];
        preds.push(rec("1", A, "man", B, "horse", "on", 0.5));
        let r = sgg_metrics(&preds, &gts(), 1).unwrap();
        assert_eq!(r.r50, 0.0);
        let r = sgg_metrics(&preds, &gts(), 2).unwrap();
        assert!((r.r50 - 100.0 / 3.0).abs() < 1e-9);
        // "on" has two GTs (one hit), "wears" one (none).
        assert!((r.mr50 - 25.0).abs() < 1e-9);
        // Only "on" has a hit: AP 0.5 weighted by 2/3.
        assert!((r.wmap_rel - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn phrase_uses_union_box() {
        // Swapped boxes keep the union but fail the per-box test.
        let preds = vec![rec("1", B, "man", A, "horse", "on", 0.9)];
        let r = sgg_metrics(&preds, &gts()[..1], 50).unwrap();
        assert_eq!(r.wmap_rel, 0.0);
        assert_eq!(r.wmap_phr, 100.0);
    }

    #[test]
    fn topk_order() {
        let rs = vec![
            rec("b", A, "x", B, "y", "r", 0.1),
            rec("a", A, "x", B, "y", "r", 0.3),
            rec("b", A, "x", B, "y", "s", 0.7),
            rec("b", A, "x", B, "y", "t", 0.7),
        ];
        let top = topk_per_image(&rs, 2);
        let rels: Vec<_> = top.iter().map(|r| (r.image_id.as_str(), r.relation.as_str())).collect();
        assert_eq!(rels, vec![("b", "s"), ("b", "t"), ("a", "r")]);
    }

    #[test]
    fn duplicate_tp_never_raises_ap() {
        let base = vec![
            rec("1", A, "man", B, "horse", "on", 0.8),
            rec("1", A, "man", B, "hat", "on", 0.6),
            rec("2", B, "dog", A, "ball", "on", 0.4),
        ];
        let before = sgg_metrics(&base, &gts(), 50).unwrap();
        for conf in [0.9, 0.7, 0.5, 0.1] {
            let mut more = base.clone();
            more.push(rec("1", A, "man", B, "horse", "on", conf));
            let after = sgg_metrics(&more, &gts(), 50).unwrap();
            assert!(after.wmap_rel <= before.wmap_rel + 1e-12);
            assert!(after.wmap_phr <= before.wmap_phr + 1e-12);
        }
    }
}
