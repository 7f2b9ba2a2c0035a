use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::lexicon::{normalize_phrase, Lexicon};
use super::{CaptionSource, EntityAnnotation, GroundedTriplet};
use crate::geometry::overlaps;

/// An ordered (subject, object) pair of region ids. Ordering is
/// lexicographic on (subject, object).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionPair {
    pub subject: String,
    pub object: String,
}

impl RegionPair {
    pub fn new(subject: &str, object: &str) -> Self {
        Self {
            subject: subject.to_string(),
            object: object.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateText {
    pub text: String,
    /// Source of the first caption that proposed this text for the pair.
    pub source: CaptionSource,
}

/// Candidate region pairs of one image and the relation texts proposed for
/// each. Every stored pair has at least one text and texts are unique per
/// pair, kept in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub image_id: String,
    texts: BTreeMap<RegionPair, Vec<CandidateText>>,
}

impl CandidateSet {
    pub fn new(image_id: &str) -> Self {
        Self {
            image_id: image_id.to_string(),
            texts: BTreeMap::new(),
        }
    }

    /// Adds `text` to `pair`. Self-pairs and empty texts are ignored.
    /// Returns true if the text was new for the pair.
    pub fn add(&mut self, pair: RegionPair, text: &str, source: CaptionSource) -> bool {
        if pair.subject == pair.object || text.trim().is_empty() {
            return false;
        }
        let entry = self.texts.entry(pair).or_default();
        if entry.iter().any(|t| t.text == text) {
            return false;
        }
        entry.push(CandidateText {
            text: text.to_string(),
            source,
        });
        true
    }

    pub fn pairs(&self) -> impl Iterator<Item = &RegionPair> {
        self.texts.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RegionPair, &[CandidateText])> {
        self.texts.iter().map(|(p, t)| (p, t.as_slice()))
    }

    pub fn texts(&self, pair: &RegionPair) -> Option<&[CandidateText]> {
        self.texts.get(pair).map(Vec::as_slice)
    }

    pub fn contains(&self, pair: &RegionPair, text: &str) -> bool {
        self.texts(pair)
            .is_some_and(|ts| ts.iter().any(|t| t.text == text))
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Number of (pair, text) entries.
    pub fn text_count(&self) -> usize {
        self.texts.values().map(Vec::len).sum()
    }

    /// Union of pairs with per-pair union of texts.
    pub fn merge(&mut self, other: &CandidateSet) {
        if self.image_id.is_empty() {
            self.image_id = other.image_id.clone();
        }
        for (pair, texts) in &other.texts {
            for t in texts {
                self.add(pair.clone(), &t.text, t.source);
            }
        }
    }

    /// Keeps only the pairs for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&RegionPair) -> bool) {
        self.texts.retain(|p, _| keep(p));
    }
}

#[derive(Debug, Clone)]
pub struct CandidateOptions {
    /// Drop pairs whose boxes do not overlap.
    pub overlap_prior: bool,
    /// Relations for which the reversed orientation is also emitted.
    pub symmetric_relations: BTreeSet<String>,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            overlap_prior: false,
            symmetric_relations: Lexicon::bundled().symmetric,
        }
    }
}

impl CandidateOptions {
    pub fn with_overlap_prior(mut self, on: bool) -> Self {
        self.overlap_prior = on;
        self
    }
}

/// Expands class-level grounded triplets into region pairs.
///
/// Every region of the subject class is paired with every region of the
/// object class, self-pairs excluded; symmetric relations also contribute
/// the reversed orientation.
pub fn generate_candidates(
    image_id: &str,
    entities: &[EntityAnnotation],
    grounded: &[GroundedTriplet],
    opts: &CandidateOptions,
) -> CandidateSet {
    let mut set = CandidateSet::new(image_id);
    let of_class = |class: &str| -> Vec<&EntityAnnotation> {
        entities
            .iter()
            .filter(|e| normalize_phrase(&e.class_name) == class)
            .collect()
    };
    for g in grounded {
        let subjects = of_class(&g.subject);
        let objects = of_class(&g.object);
        let symmetric = opts.symmetric_relations.contains(&g.relation);
        for s in &subjects {
            for o in &objects {
                if s.region_id == o.region_id {
                    continue;
                }
                if opts.overlap_prior && !overlaps(&s.bbox.to_corner(), &o.bbox.to_corner()) {
                    continue;
                }
                set.add(RegionPair::new(&s.region_id, &o.region_id), &g.relation, g.source);
                if symmetric {
                    set.add(RegionPair::new(&o.region_id, &s.region_id), &g.relation, g.source);
                }
            }
        }
    }
    set
}

/// Merges the per-caption candidate sets of one image.
pub fn dedupe_across_captions<'a>(
    image_id: &str,
    sets: impl IntoIterator<Item = &'a CandidateSet>,
) -> CandidateSet {
    let mut out = CandidateSet::new(image_id);
    for s in sets {
        debug_assert!(s.image_id == image_id || s.is_empty());
        out.merge(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use proptest::prelude::*;

    fn ent(id: &str, class: &str, cx: f64) -> EntityAnnotation {
        EntityAnnotation {
            region_id: id.into(),
            image_id: "img".into(),
            bbox: BoundingBox::new(cx, 0.5, 0.1, 0.1).unwrap(),
            class_name: class.into(),
        }
    }

    fn g(s: &str, r: &str, o: &str) -> GroundedTriplet {
        GroundedTriplet {
            subject: s.into(),
            relation: r.into(),
            object: o.into(),
            source: CaptionSource::Beam,
        }
    }

    fn pairs(set: &CandidateSet) -> Vec<(String, String)> {
        set.pairs()
            .map(|p| (p.subject.clone(), p.object.clone()))
            .collect()
    }

    #[test]
    fn class_expansion() {
        let ents = [ent("p1", "man", 0.2), ent("p2", "man", 0.5), ent("h1", "horse", 0.8)];
        let set = generate_candidates("img", &ents, &[g("man", "riding", "horse")], &CandidateOptions::default());
        assert_eq!(
            pairs(&set),
            vec![("p1".into(), "h1".into()), ("p2".into(), "h1".into())]
        );
        for p in set.pairs() {
            let texts: Vec<_> = set.texts(p).unwrap().iter().map(|t| t.text.as_str()).collect();
            assert_eq!(texts, vec!["riding"]);
        }
    }

    #[test]
    fn empty_and_self_pairs() {
        let ents = [ent("p1", "man", 0.2)];
        assert!(generate_candidates("img", &ents, &[], &CandidateOptions::default()).is_empty());
        let set = generate_candidates("img", &ents, &[g("man", "next to", "man")], &CandidateOptions::default());
        assert!(set.is_empty());
    }

    #[test]
    fn symmetric_relations_emit_both_orientations() {
        let ents = [ent("d1", "dog", 0.2), ent("c1", "cat", 0.5)];
        let opts = CandidateOptions::default();
        let set = generate_candidates("img", &ents, &[g("dog", "next to", "cat")], &opts);
        assert_eq!(pairs(&set), vec![("c1".into(), "d1".into()), ("d1".into(), "c1".into())]);
        let set = generate_candidates("img", &ents, &[g("dog", "chasing", "cat")], &opts);
        assert_eq!(pairs(&set), vec![("d1".into(), "c1".into())]);
    }

    #[test]
    fn overlap_prior_filters() {
        let ents = [ent("p1", "man", 0.2), ent("p2", "man", 0.75), ent("h1", "horse", 0.8)];
        let grounded = [g("man", "riding", "horse")];
        let on = generate_candidates("img", &ents, &grounded, &CandidateOptions::default().with_overlap_prior(true));
        assert_eq!(pairs(&on), vec![("p2".into(), "h1".into())]);
    }

    #[test]
    fn texts_deduplicated_in_first_occurrence_order() {
        let ents = [ent("p1", "man", 0.2), ent("h1", "horse", 0.8)];
        let grounded = [g("man", "riding", "horse"), g("man", "near", "horse"), g("man", "riding", "horse")];
        let set = generate_candidates("img", &ents, &grounded, &CandidateOptions::default());
        let p = RegionPair::new("p1", "h1");
        let texts: Vec<_> = set.texts(&p).unwrap().iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["riding", "near"]);
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let ents = [ent("p1", "man", 0.2), ent("h1", "horse", 0.8)];
        let s = generate_candidates("img", &ents, &[g("man", "riding", "horse")], &CandidateOptions::default());
        let empty = CandidateSet::new("img");
        assert_eq!(dedupe_across_captions("img", [&s, &s]), s);
        assert_eq!(dedupe_across_captions("img", [&s, &empty]), s);
    }

    const CLASSES: &[&str] = &["man", "horse", "dog"];
    const RELS: &[&str] = &["riding", "near", "holding", "next to"];

    fn world() -> impl Strategy<Value = (Vec<EntityAnnotation>, Vec<Vec<GroundedTriplet>>)> {
        let ents = prop::collection::vec((0..3usize, 0.05..0.95f64), 1..6).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (c, x))| ent(&format!("r{i}"), CLASSES[c], x))
                .collect::<Vec<_>>()
        });
        let trip = (0..3usize, 0..4usize, 0..3usize).prop_map(|(s, r, o)| g(CLASSES[s], RELS[r], CLASSES[o]));
        let caps = prop::collection::vec(prop::collection::vec(trip, 0..4), 0..6);
        (ents, caps)
    }

    proptest! {
        #[test]
        fn multi_caption_properties((ents, caps) in world()) {
            let opts = CandidateOptions::default();
            let per: Vec<CandidateSet> = caps.iter().map(|c| generate_candidates("img", &ents, c, &opts)).collect();
            let merged = dedupe_across_captions("img", per.iter());

            // Brute-force union oracle.
            let mut expect: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
            for set in &per {
                for (p, ts) in set.iter() {
                    let e = expect.entry((p.subject.clone(), p.object.clone())).or_default();
                    e.extend(ts.iter().map(|t| t.text.clone()));
                }
            }
            let got: BTreeMap<(String, String), BTreeSet<String>> = merged
                .iter()
                .map(|(p, ts)| ((p.subject.clone(), p.object.clone()), ts.iter().map(|t| t.text.clone()).collect()))
                .collect();
            prop_assert_eq!(&got, &expect);

            let ids: BTreeSet<&str> = ents.iter().map(|e| e.region_id.as_str()).collect();
            for (p, ts) in merged.iter() {
                prop_assert!(p.subject != p.object);
                prop_assert!(ids.contains(p.subject.as_str()) && ids.contains(p.object.as_str()));
                prop_assert!(!ts.is_empty());
            }

            // Monotone in the number of captions.
            if !per.is_empty() {
                let fewer = dedupe_across_captions("img", per[..per.len() - 1].iter());
                for (p, ts) in fewer.iter() {
                    for t in ts {
                        prop_assert!(merged.contains(p, &t.text));
                    }
                }
            }

            // Prior-on result is a subset of prior-off.
            let all: Vec<GroundedTriplet> = caps.concat();
            let off = generate_candidates("img", &ents, &all, &opts);
            let on = generate_candidates("img", &ents, &all, &opts.clone().with_overlap_prior(true));
            for (p, ts) in on.iter() {
                for t in ts {
                    prop_assert!(off.contains(p, &t.text));
                }
            }
        }
    }
}
