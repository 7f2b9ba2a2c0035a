//! Caption ingestion, triplet parsing, entity grounding and relation
//! candidate generation.

mod candidates;
mod lexicon;
mod parser;
mod synonyms;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

pub use candidates::{
    dedupe_across_captions, generate_candidates, CandidateOptions, CandidateSet, CandidateText,
    RegionPair,
};
pub use lexicon::{normalize_phrase, Lexicon, LexiconError};
pub use parser::{parse_caption, CaptionParser, ParsedTriplet};
pub use synonyms::{SynonymError, SynonymTable};

/// How a caption was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    Beam,
    Nucleus,
    Oracle,
}

impl fmt::Display for CaptionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaptionSource::Beam => "beam",
            CaptionSource::Nucleus => "nucleus",
            CaptionSource::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
    pub source: CaptionSource,
}

/// A labelled region of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub region_id: String,
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_name: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum EntityError {
    #[error("duplicate region_id {region_id:?} in image {image_id:?}")]
    DuplicateRegion { image_id: String, region_id: String },
    #[error("empty class name for region {0:?}")]
    EmptyClass(String),
}

/// Checks per-image entity invariants: unique region ids, non-empty classes.
pub fn validate_entities(entities: &[EntityAnnotation]) -> Result<(), EntityError> {
    let mut seen = HashSet::new();
    for e in entities {
        if e.class_name.trim().is_empty() {
            return Err(EntityError::EmptyClass(e.region_id.clone()));
        }
        if !seen.insert((e.image_id.as_str(), e.region_id.as_str())) {
            return Err(EntityError::DuplicateRegion {
                image_id: e.image_id.clone(),
                region_id: e.region_id.clone(),
            });
        }
    }
    Ok(())
}

/// A parsed triplet whose subject and object resolved to image classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundedTriplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub source: CaptionSource,
}

/// Resolves a parsed triplet against the classes present in one image.
///
/// Returns `None` unless both the subject and the object map (through the
/// synonym table, case-insensitively) to a class among `entities`.
pub fn ground_triplet(
    t: &ParsedTriplet,
    entities: &[EntityAnnotation],
    syn: &SynonymTable,
    source: CaptionSource,
) -> Option<GroundedTriplet> {
    let resolve = |surface: &str| -> Option<String> {
        let norm = normalize_phrase(surface);
        let canon = syn.resolve(&norm).map(str::to_string).unwrap_or(norm);
        entities
            .iter()
            .any(|e| normalize_phrase(&e.class_name) == canon)
            .then_some(canon)
    };
    Some(GroundedTriplet {
        subject: resolve(&t.subject)?,
        relation: normalize_phrase(&t.relation),
        object: resolve(&t.object)?,
        source,
    })
}

/// Parses and grounds every caption of one image, preserving caption order
/// and dropping repeated triplets.
pub fn ground_captions(
    parser: &CaptionParser,
    captions: &[Caption],
    entities: &[EntityAnnotation],
    syn: &SynonymTable,
) -> Vec<GroundedTriplet> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in captions {
        for t in parser.parse(&c.text) {
            if let Some(g) = ground_triplet(&t, entities, syn, c.source) {
                if seen.insert((g.subject.clone(), g.relation.clone(), g.object.clone())) {
                    out.push(g);
                }
            }
        }
    }
    out
}

/// Parse, ground and expand one image's captions into its candidate set.
pub fn candidates_from_captions(
    image_id: &str,
    parser: &CaptionParser,
    captions: &[Caption],
    entities: &[EntityAnnotation],
    syn: &SynonymTable,
    opts: &CandidateOptions,
) -> CandidateSet {
    let grounded = ground_captions(parser, captions, entities, syn);
    generate_candidates(image_id, entities, &grounded, opts)
}
