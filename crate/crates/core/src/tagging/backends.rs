use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RelationScore;
use crate::caption::{CandidateText, EntityAnnotation, RegionPair};
use crate::fusion::{embed_region, EmbeddingParams};
use crate::geometry::CornerBox;
use crate::seed::fnv1a;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct BackendError(pub String);

/// One region pair in a scoring pass with its candidate texts.
#[derive(Debug, Clone, Copy)]
pub struct PairQuery<'a> {
    pub pair: &'a RegionPair,
    pub subject: &'a EntityAnnotation,
    pub object: &'a EntityAnnotation,
    pub texts: &'a [CandidateText],
}

/// Relation scorer consulted for at most `n_q` pairs per call.
///
/// Implementations must be stateless: the score of a (pair, text) may not
/// depend on which other pairs share its chunk.
pub trait ScorerBackend: Sync {
    /// Returns one score per text of each query, in input order.
    fn score_chunk(&self, image_id: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError>;

    /// Backends that cannot be called concurrently return true.
    fn single_flight(&self) -> bool {
        false
    }
}

/// Scores ground-truth triplets high and everything else low.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: HashSet<(String, String, String, String)>,
    pub positive: RelationScore,
    pub negative: RelationScore,
}

impl OracleBackend {
    pub const POSITIVE: RelationScore = RelationScore {
        subject_top1: 1.0,
        object_top1: 1.0,
        relation_sigmoid: 0.95,
    };
    pub const NEGATIVE: RelationScore = RelationScore {
        subject_top1: 1.0,
        object_top1: 1.0,
        relation_sigmoid: 0.05,
    };

    /// `truth` holds `(image_id, subject_region, object_region, relation)`.
    pub fn new(truth: impl IntoIterator<Item = (String, String, String, String)>) -> Self {
        Self {
            truth: truth.into_iter().collect(),
            positive: Self::POSITIVE,
            negative: Self::NEGATIVE,
        }
    }

    pub fn is_true(&self, image_id: &str, pair: &RegionPair, text: &str) -> bool {
        self.truth.contains(&(
            image_id.to_string(),
            pair.subject.clone(),
            pair.object.clone(),
            text.to_string(),
        ))
    }
}

impl ScorerBackend for OracleBackend {
    fn score_chunk(&self, image_id: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError> {
        Ok(chunk
            .iter()
            .map(|q| {
                q.texts
                    .iter()
                    .map(|t| {
                        if self.is_true(image_id, q.pair, &t.text) {
                            self.positive
                        } else {
                            self.negative
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// One externally computed relation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    /// `[subject_region_id, object_region_id]`
    pub pair: [String; 2],
    pub text: String,
    pub subject_top1: f64,
    pub object_top1: f64,
    pub relation_sigmoid: f64,
}

/// File-backed scorer: looks up precomputed scores and fails on any
/// (pair, text) it was not given.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    scores: HashMap<(String, String, String, String), RelationScore>,
}

impl ScoreTable {
    pub fn from_records(records: impl IntoIterator<Item = ScoreRecord>) -> Result<Self, BackendError> {
        let mut scores = HashMap::new();
        for r in records {
            let s = RelationScore {
                subject_top1: r.subject_top1,
                object_top1: r.object_top1,
                relation_sigmoid: r.relation_sigmoid,
            };
            s.validate().map_err(|e| BackendError(e.to_string()))?;
            let [subj, obj] = r.pair;
            scores.insert((r.image_id, subj, obj, r.text), s);
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl ScorerBackend for ScoreTable {
    fn score_chunk(&self, image_id: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError> {
        chunk
            .iter()
            .map(|q| {
                q.texts
                    .iter()
                    .map(|t| {
                        let key = (
                            image_id.to_string(),
                            q.pair.subject.clone(),
                            q.pair.object.clone(),
                            t.text.clone(),
                        );
                        self.scores.get(&key).copied().ok_or_else(|| {
                            BackendError(format!(
                                "no score for ({}, {}) {:?} in image {image_id:?}",
                                q.pair.subject, q.pair.object, t.text
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Stable pseudo-random unit-scale feature for a string.
pub(crate) fn hashed_feature(text: &str, dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text.as_bytes()) ^ seed);
    Array1::from_shape_simple_fn(dim, || rng.gen_range(-1.0..1.0))
}

/// Seeded random-projection scorer for exercising the pipeline without a
/// trained model. Scores are a deterministic function of the two boxes,
/// their class names and the relation text.
#[derive(Debug, Clone)]
pub struct RandomProjectionScorer {
    seed: u64,
    embed: EmbeddingParams,
    classifier: Array2<f64>,
    relation: Array2<f64>,
}

impl RandomProjectionScorer {
    pub const LABEL_DIM: usize = 32;
    pub const MODEL_DIM: usize = 32;
    pub const N_CLASSES: usize = 16;
    const SHARPNESS: f64 = 4.0;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Self::MODEL_DIM;
        let embed = EmbeddingParams::random(Self::LABEL_DIM, d, &mut rng);
        let s = 1.0 / (d as f64).sqrt();
        let classifier = Array2::from_shape_simple_fn((d, Self::N_CLASSES), || rng.gen_range(-s..s));
        let relation = Array2::from_shape_simple_fn((2 * d, d), || rng.gen_range(-s..s));
        Self {
            seed,
            embed,
            classifier,
            relation,
        }
    }

    fn top1(&self, q: &Array1<f64>) -> f64 {
        let raw = q.dot(&self.classifier);
        let mean = raw.mean().unwrap_or(0.0);
        let sd = raw.std(0.0).max(1e-12);
        let logits = raw.mapv(|v| (v - mean) / sd * Self::SHARPNESS);
        let max = logits.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        1.0 / z
    }

    fn score_pair(&self, q: &PairQuery<'_>) -> Result<Vec<RelationScore>, BackendError> {
        let err = |e: crate::fusion::FusionError| BackendError(e.to_string());
        let label = |e: &EntityAnnotation| hashed_feature(&e.class_name, Self::LABEL_DIM, self.seed);
        let qs = embed_region(&q.subject.region_id, &q.subject.bbox, label(q.subject).as_slice().unwrap(), &self.embed, 0)
            .map_err(err)?
            .embedding;
        let qo = embed_region(&q.object.region_id, &q.object.bbox, label(q.object).as_slice().unwrap(), &self.embed, 0)
            .map_err(err)?
            .embedding;
        let joint = ndarray::concatenate(ndarray::Axis(0), &[qs.view(), qo.view()])
            .expect("same rank")
            .dot(&self.relation);
        let subject_top1 = self.top1(&qs);
        let object_top1 = self.top1(&qo);
        let scale = (Self::MODEL_DIM as f64).sqrt();
        Ok(q.texts
            .iter()
            .map(|t| {
                let tf = hashed_feature(&t.text, Self::MODEL_DIM, self.seed.rotate_left(17));
                let logit = joint.dot(&tf) / scale * 4.0;
                RelationScore {
                    subject_top1,
                    object_top1,
                    relation_sigmoid: 1.0 / (1.0 + (-logit).exp()),
                }
            })
            .collect())
    }
}

impl ScorerBackend for RandomProjectionScorer {
    fn score_chunk(&self, _image_id: &str, chunk: &[PairQuery<'_>]) -> Result<Vec<Vec<RelationScore>>, BackendError> {
        chunk.iter().map(|q| self.score_pair(q)).collect()
    }
}

/// Inputs to a two-prompt zero-shot scorer.
#[derive(Debug, Clone)]
pub struct PromptQuery<'a> {
    pub image_id: &'a str,
    pub pair: &'a RegionPair,
    pub relation_text: &'a str,
    /// The pair's enclosing box, the image crop the prompts are scored on.
    pub region: CornerBox,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

pub trait PromptScorer: Sync {
    /// Raw `(positive, negative)` prompt scores.
    fn score(&self, q: &PromptQuery<'_>) -> Result<(f64, f64), BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScoreRecord {
    pub image_id: String,
    pub pair: [String; 2],
    pub text: String,
    pub positive: f64,
    pub negative: f64,
}

/// Precomputed prompt scores keyed by (image, pair, text).
#[derive(Debug, Clone, Default)]
pub struct PromptScoreTable {
    scores: HashMap<(String, String, String, String), (f64, f64)>,
}

impl PromptScoreTable {
    pub fn insert(&mut self, image_id: &str, pair: &RegionPair, text: &str, positive: f64, negative: f64) {
        self.scores.insert(
            (
                image_id.to_string(),
                pair.subject.clone(),
                pair.object.clone(),
                text.to_string(),
            ),
            (positive, negative),
        );
    }

    pub fn from_records(records: impl IntoIterator<Item = PromptScoreRecord>) -> Self {
        let mut t = Self::default();
        for r in records {
            let [s, o] = &r.pair;
            t.insert(&r.image_id, &RegionPair::new(s, o), &r.text, r.positive, r.negative);
        }
        t
    }
}

impl PromptScorer for PromptScoreTable {
    fn score(&self, q: &PromptQuery<'_>) -> Result<(f64, f64), BackendError> {
        let key = (
            q.image_id.to_string(),
            q.pair.subject.clone(),
            q.pair.object.clone(),
            q.relation_text.to_string(),
        );
        self.scores.get(&key).copied().ok_or_else(|| {
            BackendError(format!(
                "no prompt score for ({}, {}) {:?} in image {:?}",
                q.pair.subject, q.pair.object, q.relation_text, q.image_id
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::CaptionSource;
    use crate::geometry::BoundingBox;

    fn ent(id: &str, class: &str, cx: f64) -> EntityAnnotation {
        EntityAnnotation {
            region_id: id.into(),
            image_id: "img".into(),
            bbox: BoundingBox::new(cx, 0.5, 0.2, 0.2).unwrap(),
            class_name: class.into(),
        }
    }

    fn texts(ts: &[&str]) -> Vec<CandidateText> {
        ts.iter()
            .map(|t| CandidateText {
                text: t.to_string(),
                source: CaptionSource::Beam,
            })
            .collect()
    }

    #[test]
    fn oracle_scores() {
        let o = OracleBackend::new([("img".into(), "a".into(), "b".into(), "riding".into())]);
        let (a, b) = (ent("a", "man", 0.3), ent("b", "horse", 0.4));
        let pair = RegionPair::new("a", "b");
        let ts = texts(&["riding", "near"]);
        let q = PairQuery {
            pair: &pair,
            subject: &a,
            object: &b,
            texts: &ts,
        };
        let s = o.score_chunk("img", &[q]).unwrap();
        assert_eq!(s[0][0], OracleBackend::POSITIVE);
        assert_eq!(s[0][1], OracleBackend::NEGATIVE);
    }

    #[test]
    fn score_table_missing_is_error() {
        let t = ScoreTable::from_records([ScoreRecord {
            image_id: "img".into(),
            pair: ["a".into(), "b".into()],
            text: "riding".into(),
            subject_top1: 0.9,
            object_top1: 0.8,
            relation_sigmoid: 0.7,
        }])
        .unwrap();
        let (a, b) = (ent("a", "man", 0.3), ent("b", "horse", 0.4));
        let pair = RegionPair::new("a", "b");
        let ok = texts(&["riding"]);
        let bad = texts(&["near"]);
        let q = |ts| PairQuery {
            pair: &pair,
            subject: &a,
            object: &b,
            texts: ts,
        };
        assert_eq!(t.score_chunk("img", &[q(&ok)]).unwrap()[0][0].relation_sigmoid, 0.7);
        assert!(t.score_chunk("img", &[q(&bad)]).is_err());
        let out_of_range = ScoreRecord {
            image_id: "img".into(),
            pair: ["a".into(), "b".into()],
            text: "x".into(),
            subject_top1: 1.2,
            object_top1: 0.8,
            relation_sigmoid: 0.7,
        };
        assert!(ScoreTable::from_records([out_of_range]).is_err());
    }

    #[test]
    fn random_projection_is_deterministic_and_in_range() {
        let s1 = RandomProjectionScorer::new(5);
        let s2 = RandomProjectionScorer::new(5);
        let (a, b) = (ent("a", "man", 0.3), ent("b", "horse", 0.4));
        let pair = RegionPair::new("a", "b");
        let ts = texts(&["riding", "near", "holding"]);
        let q = PairQuery {
            pair: &pair,
            subject: &a,
            object: &b,
            texts: &ts,
        };
        let x = s1.score_chunk("img", &[q]).unwrap();
        let y = s2.score_chunk("img", &[q]).unwrap();
        assert_eq!(x, y);
        for s in &x[0] {
            s.validate().unwrap();
        }
        assert_ne!(x[0][0].relation_sigmoid, x[0][1].relation_sigmoid);
    }
}
