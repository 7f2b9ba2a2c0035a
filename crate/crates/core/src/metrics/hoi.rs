use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{average_precision, greedy_hits, group_by, mean, validate_records, DetectionRecord, MetricError};
use crate::geometry::iou;

/// Mean AP in percent over categories that have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiReport {
    pub full: f64,
    pub rare: f64,
    pub nonrare: f64,
    pub n_categories: usize,
    pub n_rare: usize,
    /// Predictions whose category has no ground truth; they are false
    /// positives that no AP sees.
    pub unknown_category_predictions: usize,
}

/// Tab-separated `relation<TAB>object_class` lines; blank lines and lines
/// starting with `#` are skipped.
pub fn parse_rare_categories(text: &str) -> Result<BTreeSet<(String, String)>, MetricError> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(MetricError::RareFile {
                line: i + 1,
                msg: format!("expected 2 tab-separated columns, got {}", cols.len()),
            });
        }
        out.insert((cols[0].trim().to_string(), cols[1].trim().to_string()));
    }
    Ok(out)
}

/// HOI mAP with categories `(relation, object_class)`. A prediction is a hit
/// when subject and object boxes both reach `iou_thr` against an unclaimed
/// ground truth of its category in the same image.
pub fn hoi_map(
    preds: &[DetectionRecord],
    gts: &[DetectionRecord],
    rare: &BTreeSet<(String, String)>,
    iou_thr: f64,
) -> Result<HoiReport, MetricError> {
    validate_records(preds)?;
    let key = |r: &DetectionRecord| (r.relation.clone(), r.object_class.clone());
    let gt_groups = group_by(gts, key);
    let pred_groups = group_by(preds, key);
    let quality = |p: &DetectionRecord, g: &DetectionRecord| {
        let s = iou(&p.subject_box, &g.subject_box);
        let o = iou(&p.object_box, &g.object_box);
        (s >= iou_thr && o >= iou_thr).then_some(s.min(o))
    };
    let (mut all, mut rare_aps, mut nonrare_aps) = (Vec::new(), Vec::new(), Vec::new());
    for (cat, cat_gts) in &gt_groups {
        let cat_preds = pred_groups.get(cat).map_or(&[][..], Vec::as_slice);
        let hits = greedy_hits(cat_preds, cat_gts, quality);
        let ap = average_precision(&hits, cat_gts.len()).expect("group is non-empty") * 100.0;
        all.push(ap);
        if rare.contains(cat) {
            rare_aps.push(ap);
        } else {
            nonrare_aps.push(ap);
        }
    }
    let unknown_category_predictions = pred_groups
        .iter()
        .filter(|(c, _)| !gt_groups.contains_key(*c))
        .map(|(_, v)| v.len())
        .sum();
    Ok(HoiReport {
        full: mean(&all),
        rare: mean(&rare_aps),
        nonrare: mean(&nonrare_aps),
        n_categories: all.len(),
        n_rare: rare_aps.len(),
        unknown_category_predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::rec;
    use super::*;

    const A: [f64; 4] = [0.0, 0.0, 0.4, 0.4];
    const B: [f64; 4] = [0.5, 0.5, 0.9, 0.9];
    const NEAR_A: [f64; 4] = [0.0, 0.0, 0.4, 0.35];

    fn gts() -> Vec<DetectionRecord> {
        vec![
            rec("1", A, "person", B, "horse", "ride", 1.0),
            rec("1", A, "person", B, "horse", "feed", 1.0),
            rec("2", B, "person", A, "cup", "hold", 1.0),
        ]
    }

    fn rare() -> BTreeSet<(String, String)> {
        [("feed".to_string(), "horse".to_string())].into_iter().collect()
    }

    #[test]
    fn perfect_and_empty() {
        let r = hoi_map(&gts(), &gts(), &rare(), 0.5).unwrap();
        assert_eq!((r.full, r.rare, r.nonrare), (100.0, 100.0, 100.0));
        assert_eq!((r.n_categories, r.n_rare), (3, 1));
        let r = hoi_map(&[], &gts(), &rare(), 0.5).unwrap();
        assert_eq!((r.full, r.rare, r.nonrare), (0.0, 0.0, 0.0));
    }

    #[test]
    fn duplicates_and_unknown() {
        let mut preds = gts();
        preds.push(rec("1", NEAR_A, "person", B, "horse", "ride", 0.5));
        preds.push(rec("1", A, "person", B, "zebra", "ride", 0.9));
        let r = hoi_map(&preds, &gts(), &rare(), 0.5).unwrap();
        assert_eq!(r.full, 100.0);
        assert_eq!(r.unknown_category_predictions, 1);
        // A miss ranked above the true hit halves that category's AP.
        preds.push(rec("1", B, "person", B, "horse", "ride", 1.0));
        preds[0].confidence = 0.5;
        let r = hoi_map(&preds, &gts(), &rare(), 0.5).unwrap();
        assert!((r.nonrare - 75.0).abs() < 1e-9);
        let weighted = (r.n_rare as f64 * r.rare + (r.n_categories - r.n_rare) as f64 * r.nonrare) / r.n_categories as f64;
        assert!((r.full - weighted).abs() < 1e-9);
    }

    #[test]
    fn wrong_image_is_miss() {
        let preds = vec![rec("2", A, "person", B, "horse", "ride", 1.0)];
        let r = hoi_map(&preds, &gts()[..1], &BTreeSet::new(), 0.5).unwrap();
        assert_eq!(r.full, 0.0);
    }

    #[test]
    fn rare_file() {
        let s = parse_rare_categories("# rel\tobj\nfeed\thorse\n\nride\tzebra\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(matches!(parse_rare_categories("oops\n"), Err(MetricError::RareFile { line: 1, .. })));
    }
}
