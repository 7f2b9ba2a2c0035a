//! Assigning candidate relation texts to region pairs.
//!
//! Three strategies share one output schema ([`PseudoLabel`]): greedy random
//! assignment, two-prompt thresholding and batched relation scoring with a
//! confidence product and threshold.

mod backends;
mod taggers;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{CaptionSource, CandidateSet, EntityAnnotation, RegionPair};

pub use backends::{
    BackendError, OracleBackend, PairQuery, PromptQuery, PromptScoreRecord, PromptScoreTable,
    PromptScorer, RandomProjectionScorer, ScoreRecord, ScoreTable, ScorerBackend,
};
pub use taggers::{
    chunk_count, clip_style_tag, greedy_tag, negative_prompt, overlap_filter, positive_prompt,
    prompt_probability, rtagger_infer, TagOutcome,
};

#[derive(Debug, Error)]
pub enum TagError {
    #[error("invalid tagger configuration: {0}")]
    Config(String),
    #[error("image {image_id:?}: candidate references unknown region {region_id:?}")]
    UnknownRegion { image_id: String, region_id: String },
    #[error("image {image_id:?}: scoring chunk {chunk} failed: {source}")]
    Backend {
        image_id: String,
        chunk: usize,
        #[source]
        source: BackendError,
    },
    #[error("relation score out of range: {0}")]
    Score(String),
}

/// Top-1 subject and object class probabilities plus the relation sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub subject_top1: f64,
    pub object_top1: f64,
    pub relation_sigmoid: f64,
}

impl RelationScore {
    pub fn new(subject_top1: f64, object_top1: f64, relation_sigmoid: f64) -> Result<Self, TagError> {
        let s = Self {
            subject_top1,
            object_top1,
            relation_sigmoid,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), TagError> {
        for v in [self.subject_top1, self.object_top1, self.relation_sigmoid] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TagError::Score(format!("{self:?}")));
            }
        }
        Ok(())
    }
}

/// Confidence of a scored relation: the product of the three factors.
pub fn confidence(s: &RelationScore) -> f64 {
    s.subject_top1 * s.object_top1 * s.relation_sigmoid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Greedy,
    ClipStyle,
    Rtagger,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub image_id: String,
    pub subject_region_id: String,
    pub object_region_id: String,
    pub relation_text: String,
    pub confidence: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_source: Option<CaptionSource>,
}

impl PseudoLabel {
    pub fn pair(&self) -> RegionPair {
        RegionPair::new(&self.subject_region_id, &self.object_region_id)
    }

    /// `(image, subject, object, relation)` identity used for deduplication
    /// and comparison against ground truth.
    pub fn key(&self) -> (String, String, String, String) {
        (
            self.image_id.clone(),
            self.subject_region_id.clone(),
            self.object_region_id.clone(),
            self.relation_text.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerKind {
    Greedy,
    ClipStyle,
    Rtagger,
}

impl FromStr for TaggerKind {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "clip" | "clip_style" | "clip-style" => Ok(Self::ClipStyle),
            "rtagger" | "r-tagger" => Ok(Self::Rtagger),
            other => Err(TagError::Config(format!("unknown tagger kind {other:?}"))),
        }
    }
}

impl fmt::Display for TaggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::ClipStyle => "clip_style",
            Self::Rtagger => "rtagger",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    /// Maximum region pairs per scoring pass.
    pub n_q: usize,
    /// Confidence threshold; labels strictly above it are kept.
    pub eta: f64,
    pub overlap_prior: bool,
    /// Positive-prompt probability threshold for prompt tagging.
    pub clip_threshold: f64,
    pub top_k: usize,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            n_q: 100,
            eta: 0.2,
            overlap_prior: false,
            clip_threshold: 0.8,
            top_k: 100,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), TagError> {
        if self.n_q == 0 {
            return Err(TagError::Config("n_q must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(TagError::Config(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.clip_threshold) {
            return Err(TagError::Config(format!(
                "clip_threshold must be in [0, 1], got {}",
                self.clip_threshold
            )));
        }
        Ok(())
    }
}

/// Region lookup for one image.
#[derive(Debug, Clone)]
pub struct ImageContext<'a> {
    pub image_id: &'a str,
    regions: HashMap<&'a str, &'a EntityAnnotation>,
}

impl<'a> ImageContext<'a> {
    pub fn new(image_id: &'a str, entities: &'a [EntityAnnotation]) -> Self {
        Self {
            image_id,
            regions: entities
                .iter()
                .map(|e| (e.region_id.as_str(), e))
                .collect(),
        }
    }

    pub fn region(&self, id: &str) -> Result<&'a EntityAnnotation, TagError> {
        self.regions
            .get(id)
            .copied()
            .ok_or_else(|| TagError::UnknownRegion {
                image_id: self.image_id.to_string(),
                region_id: id.to_string(),
            })
    }

    pub fn pair(&self, p: &RegionPair) -> Result<(&'a EntityAnnotation, &'a EntityAnnotation), TagError> {
        Ok((self.region(&p.subject)?, self.region(&p.object)?))
    }
}

/// Collapses duplicate `(image, pair, text)` labels keeping the maximum
/// confidence; first-occurrence order is preserved.
pub fn merge_labels(labels: impl IntoIterator<Item = PseudoLabel>) -> Vec<PseudoLabel> {
    let mut index: HashMap<(String, String, String, String), usize> = HashMap::new();
    let mut out: Vec<PseudoLabel> = Vec::new();
    for l in labels {
        match index.get(&l.key()) {
            Some(&i) => {
                if l.confidence > out[i].confidence {
                    out[i] = l;
                }
            }
            None => {
                index.insert(l.key(), out.len());
                out.push(l);
            }
        }
    }
    out
}

/// The `k` most confident labels, ties broken by input order.
pub fn select_topk(labels: &[PseudoLabel], k: usize) -> Vec<PseudoLabel> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| labels[b].confidence.total_cmp(&labels[a].confidence));
    idx.into_iter().take(k).map(|i| labels[i].clone()).collect()
}

/// Checks that every label names a pair and text of `cands`.
pub fn labels_within(labels: &[PseudoLabel], cands: &CandidateSet) -> bool {
    labels
        .iter()
        .all(|l| l.image_id == cands.image_id && cands.contains(&l.pair(), &l.relation_text))
}
