use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::backends::{PairQuery, PromptQuery, PromptScorer, ScorerBackend};
use super::{confidence, merge_labels, ImageContext, Provenance, PseudoLabel, TagError, TaggerConfig};
use crate::caption::{CandidateSet, CandidateText, RegionPair};
use crate::geometry::{overlaps, union_box};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagOutcome {
    pub labels: Vec<PseudoLabel>,
    /// Pairs left after the overlap prior.
    pub pairs: usize,
    /// Backend or scorer invocations.
    pub passes: usize,
}

/// Pairs of `cands` surviving the overlap prior (all pairs when it is off),
/// in region-id order.
pub fn overlap_filter<'c>(
    cands: &'c CandidateSet,
    ctx: &ImageContext<'_>,
    on: bool,
) -> Result<Vec<(&'c RegionPair, &'c [CandidateText])>, TagError> {
    let mut out = Vec::with_capacity(cands.len());
    for (pair, texts) in cands.iter() {
        let (s, o) = ctx.pair(pair)?;
        if !on || overlaps(&s.bbox.to_corner(), &o.bbox.to_corner()) {
            out.push((pair, texts));
        }
    }
    Ok(out)
}

fn label(image_id: &str, pair: &RegionPair, t: &CandidateText, conf: f64, provenance: Provenance) -> PseudoLabel {
    PseudoLabel {
        image_id: image_id.to_string(),
        subject_region_id: pair.subject.clone(),
        object_region_id: pair.object.clone(),
        relation_text: t.text.clone(),
        confidence: conf,
        provenance,
        caption_source: Some(t.source),
    }
}

/// Assigns one uniformly drawn candidate text to every surviving pair.
pub fn greedy_tag(
    cands: &CandidateSet,
    ctx: &ImageContext<'_>,
    rng: &mut impl Rng,
    cfg: &TaggerConfig,
) -> Result<TagOutcome, TagError> {
    cfg.validate()?;
    let pairs = overlap_filter(cands, ctx, cfg.overlap_prior)?;
    let labels = pairs
        .iter()
        .filter_map(|(pair, texts)| {
            texts
                .choose(rng)
                .map(|t| label(&cands.image_id, pair, t, 1.0, Provenance::Greedy))
        })
        .collect();
    Ok(TagOutcome {
        labels,
        pairs: pairs.len(),
        passes: 0,
    })
}

pub fn positive_prompt(subject: &str, relation: &str, object: &str) -> String {
    format!("a photo of {subject} {relation} {object}")
}

pub fn negative_prompt(subject: &str, object: &str) -> String {
    format!("a photo of {subject} not interacting with {object}")
}

/// Two-way softmax of raw prompt scores, the positive probability.
pub fn prompt_probability(positive: f64, negative: f64) -> f64 {
    1.0 / (1.0 + (negative - positive).exp())
}

/// Scores each (pair, text) with a positive and a negative prompt on the
/// pair's enclosing box and keeps texts whose positive probability exceeds
/// `cfg.clip_threshold`.
pub fn clip_style_tag(
    cands: &CandidateSet,
    ctx: &ImageContext<'_>,
    scorer: &dyn PromptScorer,
    cfg: &TaggerConfig,
) -> Result<TagOutcome, TagError> {
    cfg.validate()?;
    let pairs = overlap_filter(cands, ctx, cfg.overlap_prior)?;
    let mut labels = Vec::new();
    let mut passes = 0;
    for (chunk_idx, (pair, texts)) in pairs.iter().enumerate() {
        let (s, o) = ctx.pair(pair)?;
        let region = union_box(&s.bbox.to_corner(), &o.bbox.to_corner());
        for t in texts.iter() {
            let q = PromptQuery {
                image_id: &cands.image_id,
                pair,
                relation_text: &t.text,
                region,
                positive_prompt: positive_prompt(&s.class_name, &t.text, &o.class_name),
                negative_prompt: negative_prompt(&s.class_name, &o.class_name),
            };
            let (pos, neg) = scorer.score(&q).map_err(|source| TagError::Backend {
                image_id: cands.image_id.clone(),
                chunk: chunk_idx,
                source,
            })?;
            passes += 1;
            let p = prompt_probability(pos, neg);
            if p > cfg.clip_threshold {
                labels.push(label(&cands.image_id, pair, t, p, Provenance::ClipStyle));
            }
        }
    }
    Ok(TagOutcome {
        labels: merge_labels(labels),
        pairs: pairs.len(),
        passes,
    })
}

/// Number of scoring passes for `pairs` region pairs at `n_q` per pass.
pub fn chunk_count(pairs: usize, n_q: usize) -> usize {
    pairs.div_ceil(n_q.max(1))
}

/// Scores candidate pairs in chunks of at most `cfg.n_q`, keeps texts whose
/// confidence product exceeds `cfg.eta` and merges duplicates by maximum
/// confidence.
pub fn rtagger_infer(
    cands: &CandidateSet,
    ctx: &ImageContext<'_>,
    backend: &dyn ScorerBackend,
    cfg: &TaggerConfig,
) -> Result<TagOutcome, TagError> {
    cfg.validate()?;
    let pairs = overlap_filter(cands, ctx, cfg.overlap_prior)?;
    let mut queries = Vec::with_capacity(pairs.len());
    for (pair, texts) in &pairs {
        let (subject, object) = ctx.pair(pair)?;
        queries.push(PairQuery {
            pair,
            subject,
            object,
            texts,
        });
    }
    let image_id = cands.image_id.as_str();
    let score = |(i, chunk): (usize, &[PairQuery<'_>])| -> Result<Vec<PseudoLabel>, TagError> {
        let scores = backend
            .score_chunk(image_id, chunk)
            .map_err(|source| TagError::Backend {
                image_id: image_id.to_string(),
                chunk: i,
                source,
            })?;
        if scores.len() != chunk.len() {
            return Err(TagError::Backend {
                image_id: image_id.to_string(),
                chunk: i,
                source: super::BackendError(format!(
                    "returned {} score rows for {} pairs",
                    scores.len(),
                    chunk.len()
                )),
            });
        }
        let mut out = Vec::new();
        for (q, row) in chunk.iter().zip(scores) {
            if row.len() != q.texts.len() {
                return Err(TagError::Backend {
                    image_id: image_id.to_string(),
                    chunk: i,
                    source: super::BackendError(format!(
                        "returned {} scores for {} texts of ({}, {})",
                        row.len(),
                        q.texts.len(),
                        q.pair.subject,
                        q.pair.object
                    )),
                });
            }
            for (t, s) in q.texts.iter().zip(row) {
                s.validate()?;
                let c = confidence(&s);
                if c > cfg.eta {
                    out.push(label(image_id, q.pair, t, c, Provenance::Rtagger));
                }
            }
        }
        Ok(out)
    };
    let chunks: Vec<(usize, &[PairQuery<'_>])> = queries.chunks(cfg.n_q).enumerate().collect();
    let per_chunk: Vec<Vec<PseudoLabel>> = if backend.single_flight() {
        chunks.into_iter().map(score).collect::<Result<_, _>>()?
    } else {
        chunks.into_par_iter().map(score).collect::<Result<_, _>>()?
    };
    Ok(TagOutcome {
        labels: merge_labels(per_chunk.into_iter().flatten()),
        pairs: pairs.len(),
        passes: chunk_count(queries.len(), cfg.n_q),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::caption::{CaptionSource, EntityAnnotation};
    use crate::geometry::BoundingBox;
    use crate::tagging::{BackendError, PromptScoreTable, RandomProjectionScorer, RelationScore};

    fn ent(id: &str, cx: f64) -> EntityAnnotation {
        EntityAnnotation {
            region_id: id.into(),
            image_id: "img".into(),
            bbox: BoundingBox::new(cx, 0.5, 0.1, 0.1).unwrap(),
            class_name: format!("c{id}"),
        }
    }

    /// `n` regions spread along x; consecutive regions overlap.
    fn regions(n: usize) -> Vec<EntityAnnotation> {
        (0..n).map(|i| ent(&format!("r{i:03}"), 0.05 + 0.08 * i as f64 / n as f64 * 10.0)).collect()
    }

    fn all_pairs(ents: &[EntityAnnotation], limit: usize, texts: &[&str]) -> CandidateSet {
        let mut c = CandidateSet::new("img");
        'outer: for a in ents {
            for b in ents {
                if a.region_id == b.region_id {
                    continue;
                }
                if c.len() == limit {
                    break 'outer;
                }
                for t in texts {
                    c.add(RegionPair::new(&a.region_id, &b.region_id), t, CaptionSource::Beam);
                }
            }
        }
        c
    }

    struct Counting<B> {
        inner: B,
        calls: AtomicUsize,
        sizes: Mutex<Vec<usize>>,
    }

    impl<B: ScorerBackend> ScorerBackend for Counting<B> {
        fn score_chunk(&self, image_id: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.sizes.lock().unwrap().push(chunk.len());
            self.inner.score_chunk(image_id, chunk)
        }
    }

    struct FailOn(String);

    impl ScorerBackend for FailOn {
        fn score_chunk(&self, _: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError> {
            if chunk.iter().any(|q| q.pair.subject == self.0) {
                return Err(BackendError("boom".into()));
            }
            Ok(chunk
                .iter()
                .map(|q| vec![RelationScore::new(1.0, 1.0, 0.5).unwrap(); q.texts.len()])
                .collect())
        }
    }

    fn label_set(o: &TagOutcome) -> BTreeSet<(String, String, String)> {
        o.labels
            .iter()
            .map(|l| (l.subject_region_id.clone(), l.object_region_id.clone(), l.relation_text.clone()))
            .collect()
    }

    #[test]
    fn three_passes_for_250_pairs() {
        let ents = regions(20);
        let cands = all_pairs(&ents, 250, &["near"]);
        assert_eq!(cands.len(), 250);
        let ctx = ImageContext::new("img", &ents);
        let b = Counting {
            inner: RandomProjectionScorer::new(1),
            calls: AtomicUsize::new(0),
            sizes: Mutex::new(Vec::new()),
        };
        let out = rtagger_infer(&cands, &ctx, &b, &TaggerConfig::default()).unwrap();
        assert_eq!(out.passes, 3);
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
        let mut sizes = b.sizes.lock().unwrap().clone();
        sizes.sort();
        assert_eq!(sizes, vec![50, 100, 100]);
        assert_eq!(chunk_count(0, 100), 0);
        assert_eq!(chunk_count(100, 100), 1);
        assert_eq!(chunk_count(101, 100), 2);
    }

    #[test]
    fn partition_invariance() {
        let ents = regions(16);
        let cands = all_pairs(&ents, 240, &["near", "riding", "on"]);
        let ctx = ImageContext::new("img", &ents);
        let backend = RandomProjectionScorer::new(9);
        let run = |n_q| {
            let cfg = TaggerConfig {
                n_q,
                eta: 0.3,
                ..Default::default()
            };
            let mut l = rtagger_infer(&cands, &ctx, &backend, &cfg).unwrap().labels;
            l.sort_by_key(|a| a.key());
            l
        };
        let whole = run(1000);
        assert!(!whole.is_empty());
        for n_q in [1, 7, 100] {
            assert_eq!(run(n_q), whole, "n_q = {n_q}");
        }
    }

    #[test]
    fn eta_extremes() {
        let ents = regions(6);
        let cands = all_pairs(&ents, 30, &["near", "riding"]);
        let ctx = ImageContext::new("img", &ents);
        let backend = RandomProjectionScorer::new(4);
        let at = |eta| {
            rtagger_infer(&cands, &ctx, &backend, &TaggerConfig { eta, ..Default::default() })
                .unwrap()
                .labels
                .len()
        };
        assert_eq!(at(0.0), cands.text_count());
        assert_eq!(at(1.0), 0);
    }

    #[test]
    fn backend_failure_names_chunk() {
        let ents = regions(6);
        let cands = all_pairs(&ents, 30, &["near"]);
        let ctx = ImageContext::new("img", &ents);
        let cfg = TaggerConfig {
            n_q: 5,
            ..Default::default()
        };
        // Pairs are in region-id order, so r002 as subject first appears in
        // pairs 10..15, i.e. chunk 2.
        let err = rtagger_infer(&cands, &ctx, &FailOn("r002".into()), &cfg).unwrap_err();
        match err {
            TagError::Backend { chunk, .. } => assert_eq!(chunk, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_region_rejected() {
        let ents = regions(2);
        let mut cands = CandidateSet::new("img");
        cands.add(RegionPair::new("r000", "zzz"), "near", CaptionSource::Beam);
        let ctx = ImageContext::new("img", &ents);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            greedy_tag(&cands, &ctx, &mut rng, &TaggerConfig::default()),
            Err(TagError::UnknownRegion { .. })
        ));
    }

    #[test]
    fn greedy_singleton_and_prior() {
        let ents = vec![ent("a", 0.2), ent("b", 0.25), ent("c", 0.8)];
        let mut cands = CandidateSet::new("img");
        cands.add(RegionPair::new("a", "b"), "riding", CaptionSource::Beam);
        cands.add(RegionPair::new("a", "c"), "near", CaptionSource::Beam);
        let ctx = ImageContext::new("img", &ents);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let off = greedy_tag(&cands, &ctx, &mut rng, &TaggerConfig::default()).unwrap();
        assert_eq!(off.labels.len(), 2);
        assert!(off.labels.iter().all(|l| l.confidence == 1.0 && l.provenance == Provenance::Greedy));
        let cfg = TaggerConfig {
            overlap_prior: true,
            ..Default::default()
        };
        let on = greedy_tag(&cands, &ctx, &mut rng, &cfg).unwrap();
        assert_eq!(on.labels.len(), 1);
        assert_eq!(on.labels[0].relation_text, "riding");
    }

    #[test]
    fn greedy_is_uniform() {
        let ents = vec![ent("a", 0.2), ent("b", 0.25)];
        let mut cands = CandidateSet::new("img");
        cands.add(RegionPair::new("a", "b"), "x", CaptionSource::Beam);
        cands.add(RegionPair::new("a", "b"), "y", CaptionSource::Beam);
        let ctx = ImageContext::new("img", &ents);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut xs = 0;
        for _ in 0..n {
            let out = greedy_tag(&cands, &ctx, &mut rng, &TaggerConfig::default()).unwrap();
            assert_eq!(out.labels.len(), 1);
            if out.labels[0].relation_text == "x" {
                xs += 1;
            }
        }
        let f = xs as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
    }

    #[test]
    fn greedy_reproducible() {
        let ents = regions(8);
        let cands = all_pairs(&ents, 56, &["a", "b", "c", "d"]);
        let ctx = ImageContext::new("img", &ents);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            greedy_tag(&cands, &ctx, &mut rng, &TaggerConfig::default()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prompt_probability_cases() {
        let ents = vec![ent("a", 0.2), ent("b", 0.25)];
        let pair = RegionPair::new("a", "b");
        let mut cands = CandidateSet::new("img");
        cands.add(pair.clone(), "even", CaptionSource::Beam);
        cands.add(pair.clone(), "strong", CaptionSource::Beam);
        let mut table = PromptScoreTable::default();
        table.insert("img", &pair, "even", 3.0, 3.0);
        table.insert("img", &pair, "strong", 30.0, 0.0);
        let ctx = ImageContext::new("img", &ents);
        let out = clip_style_tag(&cands, &ctx, &table, &TaggerConfig::default()).unwrap();
        assert_eq!(prompt_probability(3.0, 3.0), 0.5);
        assert_eq!(out.labels.len(), 1);
        assert_eq!(out.labels[0].relation_text, "strong");
        assert!(out.labels[0].confidence > 0.999);
        assert_eq!(out.passes, 2);
    }

    #[test]
    fn prompts_and_region() {
        struct Check;
        impl PromptScorer for Check {
            fn score(&self, q: &PromptQuery<'_>) -> Result<(f64, f64), BackendError> {
                assert_eq!(q.positive_prompt, "a photo of ca riding cb");
                assert_eq!(q.negative_prompt, "a photo of ca not interacting with cb");
                let r = q.region;
                assert!((r.x1() - 0.15).abs() < 1e-12 && (r.x2() - 0.35).abs() < 1e-12);
                Ok((1.0, 0.0))
            }
        }
        let ents = vec![ent("a", 0.2), ent("b", 0.3)];
        let mut cands = CandidateSet::new("img");
        cands.add(RegionPair::new("a", "b"), "riding", CaptionSource::Beam);
        let ctx = ImageContext::new("img", &ents);
        clip_style_tag(&cands, &ctx, &Check, &TaggerConfig::default()).unwrap();
    }

    proptest! {
        #[test]
        fn outputs_within_candidates_and_prior_subset(seed in 0u64..1000, n in 2usize..8) {
            let ents = regions(n);
            let cands = all_pairs(&ents, 100, &["a", "b", "c"]);
            let ctx = ImageContext::new("img", &ents);
            let backend = RandomProjectionScorer::new(seed);
            let off = TaggerConfig { eta: 0.1, ..Default::default() };
            let on = TaggerConfig { overlap_prior: true, ..off };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g_off = greedy_tag(&cands, &ctx, &mut rng, &off).unwrap();
            let g_on = greedy_tag(&cands, &ctx, &mut rng, &on).unwrap();
            let r_off = rtagger_infer(&cands, &ctx, &backend, &off).unwrap();
            let r_on = rtagger_infer(&cands, &ctx, &backend, &on).unwrap();
            for o in [&g_off, &g_on, &r_off, &r_on] {
                prop_assert!(crate::tagging::labels_within(&o.labels, &cands));
            }
            let pairs = |o: &TagOutcome| o.labels.iter().map(|l| l.pair()).collect::<BTreeSet<_>>();
            prop_assert!(pairs(&g_on).is_subset(&pairs(&g_off)));
            prop_assert!(label_set(&r_on).is_subset(&label_set(&r_off)));
        }

        #[test]
        fn eta_superset(seed in 0u64..1000, lo in 0.0..1.0f64, hi in 0.0..1.0f64) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let ents = regions(5);
            let cands = all_pairs(&ents, 20, &["a", "b"]);
            let ctx = ImageContext::new("img", &ents);
            let backend = RandomProjectionScorer::new(seed);
            let at = |eta| label_set(&rtagger_infer(&cands, &ctx, &backend, &TaggerConfig { eta, ..Default::default() }).unwrap());
            prop_assert!(at(hi).is_subset(&at(lo)));
        }
    }
}
