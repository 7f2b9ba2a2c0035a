//! File-level stages of the pseudo-labelling pipeline and the worker pool
//! that maps them over images.
//!
//! Each stage is a pure function of one image's records. Results are
//! collected into `BTreeMap`s keyed by image id, so output order and content
//! do not depend on the number of workers.

mod config;
mod records;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{
    generate_candidates, ground_captions, Caption, CandidateOptions, CandidateSet, CaptionParser,
    EntityAnnotation, Lexicon, SynonymTable,
};
use crate::seed::image_rng;
use crate::tagging::{
    clip_style_tag, greedy_tag, rtagger_infer, select_topk, ImageContext, PromptScorer, PseudoLabel,
    ScorerBackend, TagError, TaggerConfig,
};

pub use config::{PipelineConfig, CONFIG_KEYS};
pub use records::{
    by_image, candidate_records, candidate_sets, read_entities, read_jsonl, read_jsonl_with, write_jsonl,
    CandidateRecord, EntityLine, GroundedRecord, LineError, Parsed,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Unreadable or malformed input.
    #[error("{0}")]
    Input(String),
    /// Input that is well-formed but breaks a documented contract, such as a
    /// configuration value out of range.
    #[error("{0}")]
    Contract(String),
}

impl From<TagError> for PipelineError {
    fn from(e: TagError) -> Self {
        match e {
            TagError::UnknownRegion { .. } => PipelineError::Input(e.to_string()),
            _ => PipelineError::Contract(e.to_string()),
        }
    }
}

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Contract(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Applies `f` to every image and collects results keyed by image id.
pub fn map_images<I: Sync, R: Send>(
    images: &BTreeMap<String, I>,
    f: impl Fn(&str, &I) -> Result<R, PipelineError> + Sync,
) -> Result<BTreeMap<String, R>, PipelineError> {
    images
        .par_iter()
        .map(|(id, input)| f(id, input).map(|r| (id.clone(), r)))
        .collect()
}

/// Parses and grounds captions image by image.
pub fn parse_captions(
    captions: &[Caption],
    entities: &[EntityAnnotation],
    syn: &SynonymTable,
) -> Result<Vec<GroundedRecord>, PipelineError> {
    let parser = CaptionParser::with_synonyms(Lexicon::bundled(), syn);
    let caps = by_image(captions, |c| &c.image_id);
    let ents = by_image(entities, |e| &e.image_id);
    let none = Vec::new();
    let out = map_images(&caps, |id, cs| {
        let es = ents.get(id).unwrap_or(&none);
        Ok(ground_captions(&parser, cs, es, syn)
            .iter()
            .map(|g| GroundedRecord::new(id, g))
            .collect::<Vec<_>>())
    })?;
    Ok(out.into_values().flatten().collect())
}

/// Expands grounded triplets into per-image candidate sets.
pub fn gen_candidates(
    grounded: &[GroundedRecord],
    entities: &[EntityAnnotation],
    opts: &CandidateOptions,
) -> Result<BTreeMap<String, CandidateSet>, PipelineError> {
    let trips = by_image(grounded, |g| &g.image_id);
    let ents = by_image(entities, |e| &e.image_id);
    let none = Vec::new();
    map_images(&trips, |id, gs| {
        let ts: Vec<_> = gs.iter().map(GroundedRecord::triplet).collect();
        Ok(generate_candidates(id, ents.get(id).unwrap_or(&none), &ts, opts))
    })
}

/// The tagging strategy with whatever it needs to score.
pub enum Tagger<'a> {
    /// Per-image generators are seeded from `seed` and the image id.
    Greedy { seed: u64 },
    ClipStyle(&'a dyn PromptScorer),
    Rtagger(&'a dyn ScorerBackend),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagSummary {
    pub images: usize,
    pub pairs: usize,
    pub candidate_texts: usize,
    pub labels: usize,
    /// `labels / candidate_texts`.
    pub retention: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagRun {
    pub labels: Vec<PseudoLabel>,
    pub summary: TagSummary,
}

/// Tags every image and keeps its `cfg.top_k` most confident labels.
pub fn tag_images(
    cands: &BTreeMap<String, CandidateSet>,
    entities: &[EntityAnnotation],
    tagger: &Tagger<'_>,
    cfg: &TaggerConfig,
) -> Result<TagRun, PipelineError> {
    cfg.validate()?;
    let ents = by_image(entities, |e| &e.image_id);
    let none = Vec::new();
    let per_image = map_images(cands, |id, set| {
        let es = ents.get(id).unwrap_or(&none);
        let ctx = ImageContext::new(id, es);
        let out = match tagger {
            Tagger::Greedy { seed } => greedy_tag(set, &ctx, &mut image_rng(*seed, id), cfg)?,
            Tagger::ClipStyle(s) => clip_style_tag(set, &ctx, *s, cfg)?,
            Tagger::Rtagger(b) => rtagger_infer(set, &ctx, *b, cfg)?,
        };
        Ok((select_topk(&out.labels, cfg.top_k), out.pairs, set.text_count()))
    })?;
    let mut summary = TagSummary {
        images: per_image.len(),
        ..Default::default()
    };
    let mut labels = Vec::new();
    for (ls, pairs, texts) in per_image.into_values() {
        summary.pairs += pairs;
        summary.candidate_texts += texts;
        labels.extend(ls);
    }
    summary.labels = labels.len();
    summary.retention = if summary.candidate_texts == 0 {
        0.0
    } else {
        summary.labels as f64 / summary.candidate_texts as f64
    };
    Ok(TagRun { labels, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::CaptionSource;
    use crate::synth::{gen_world, oracle_scorer, WorldConfig};
    use std::collections::BTreeSet;

    fn world_inputs(cfg: &WorldConfig) -> (crate::synth::SynthWorld, Vec<Caption>, Vec<EntityAnnotation>) {
        let w = gen_world(cfg).unwrap();
        let caps = w.captions().cloned().collect();
        let ents = w.entities().cloned().collect();
        (w, caps, ents)
    }

    #[test]
    fn end_to_end_recovers_truth_for_any_worker_count() {
        let cfg = WorldConfig { n_images: 40, seed: 5, ..Default::default() }.noise_free();
        let (w, caps, ents) = world_inputs(&cfg);
        let oracle = oracle_scorer(&w);
        let truth: BTreeSet<_> = w.triplets().map(|t| t.key()).collect();
        let run = |workers| {
            with_workers(workers, || {
                let g = parse_captions(&caps, &ents, &w.synonyms).unwrap();
                let c = gen_candidates(&g, &ents, &CandidateOptions::default()).unwrap();
                tag_images(&c, &ents, &Tagger::Rtagger(&oracle), &TaggerConfig::default()).unwrap()
            })
            .unwrap()
        };
        let one = run(1);
        let got: BTreeSet<_> = one.labels.iter().map(|l| l.key()).collect();
        assert_eq!(got, truth);
        assert_eq!(run(4), one);
    }

    #[test]
    fn greedy_independent_of_workers() {
        let cfg = WorldConfig { n_images: 30, seed: 8, ..Default::default() };
        let (w, caps, ents) = world_inputs(&cfg);
        let run = |workers| {
            with_workers(workers, || {
                let g = parse_captions(&caps, &ents, &w.synonyms).unwrap();
                let c = gen_candidates(&g, &ents, &CandidateOptions::default()).unwrap();
                tag_images(&c, &ents, &Tagger::Greedy { seed: 1 }, &TaggerConfig::default()).unwrap()
            })
            .unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn empty_and_single_caption() {
        assert!(parse_captions(&[], &[], &SynonymTable::new()).unwrap().is_empty());
        let caps = vec![Caption {
            image_id: "i".into(),
            text: "a man riding a horse".into(),
            source: CaptionSource::Beam,
        }];
        let ent = |id: &str, class: &str| EntityAnnotation {
            region_id: id.into(),
            image_id: "i".into(),
            bbox: crate::geometry::BoundingBox::new(0.5, 0.5, 0.2, 0.2).unwrap(),
            class_name: class.into(),
        };
        let ents = vec![ent("p", "man"), ent("h", "horse")];
        let mut twice = caps.clone();
        twice.extend(caps.clone());
        for input in [&caps, &twice] {
            let g = parse_captions(input, &ents, &SynonymTable::new()).unwrap();
            assert_eq!(g.len(), 1);
            assert_eq!((g[0].subject.as_str(), g[0].relation.as_str(), g[0].object.as_str()), ("man", "riding", "horse"));
        }
    }
}
