//! Line-delimited record files: one JSON object per line, UTF-8.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::caption::{CandidateSet, CaptionSource, EntityAnnotation, GroundedTriplet, RegionPair};
use crate::geometry::{BoundingBox, CornerBox};

/// A line that could not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
}

/// Reads every well-formed line of `text`; blank lines are ignored and bad
/// lines are collected with their 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Parsed<T> {
    read_jsonl_with(text, |v: T| Ok(v))
}

/// Like [`read_jsonl`], converting each decoded line with `convert`.
pub fn read_jsonl_with<R: DeserializeOwned, T>(text: &str, convert: impl Fn(R) -> Result<T, String>) -> Parsed<T> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<R>(line)
            .map_err(|e| e.to_string())
            .and_then(&convert)
        {
            Ok(r) => records.push(r),
            Err(message) => errors.push(LineError { line: i + 1, message }),
        }
    }
    Parsed { records, errors }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Entity line as found on disk: either a normalized `box` or a pixel
/// `bbox_px` corner box with the image size.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityLine {
    pub image_id: String,
    pub region_id: String,
    pub class_name: String,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
    pub bbox_px: Option<[f64; 4]>,
    pub image_width: Option<f64>,
    pub image_height: Option<f64>,
}

impl TryFrom<EntityLine> for EntityAnnotation {
    type Error = String;

    fn try_from(e: EntityLine) -> Result<Self, String> {
        let bbox = match (e.bbox, e.bbox_px, e.image_width, e.image_height) {
            (Some(b), None, _, _) => b,
            (None, Some([x1, y1, x2, y2]), Some(w), Some(h)) => CornerBox::from_pixels(x1, y1, x2, y2, w, h)
                .map_err(|err| err.to_string())?
                .to_center(),
            (None, Some(_), _, _) => return Err("bbox_px needs image_width and image_height".into()),
            (Some(_), Some(_), _, _) => return Err("give either box or bbox_px, not both".into()),
            (None, None, _, _) => return Err("missing box".into()),
        };
        if e.class_name.trim().is_empty() {
            return Err("empty class_name".into());
        }
        Ok(EntityAnnotation {
            region_id: e.region_id,
            image_id: e.image_id,
            bbox,
            class_name: e.class_name,
        })
    }
}

pub fn read_entities(text: &str) -> Parsed<EntityAnnotation> {
    read_jsonl_with(text, |e: EntityLine| EntityAnnotation::try_from(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedRecord {
    pub image_id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub source: CaptionSource,
}

impl GroundedRecord {
    pub fn new(image_id: &str, g: &GroundedTriplet) -> Self {
        Self {
            image_id: image_id.to_string(),
            subject: g.subject.clone(),
            relation: g.relation.clone(),
            object: g.object.clone(),
            source: g.source,
        }
    }

    pub fn triplet(&self) -> GroundedTriplet {
        GroundedTriplet {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            object: self.object.clone(),
            source: self.source,
        }
    }
}

/// One candidate pair with its texts; `sources[i]` belongs to `texts[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_id: String,
    pub subject_region_id: String,
    pub object_region_id: String,
    pub texts: Vec<String>,
    pub sources: Vec<CaptionSource>,
}

pub fn candidate_records(set: &CandidateSet) -> Vec<CandidateRecord> {
    set.iter()
        .map(|(pair, texts)| CandidateRecord {
            image_id: set.image_id.clone(),
            subject_region_id: pair.subject.clone(),
            object_region_id: pair.object.clone(),
            texts: texts.iter().map(|t| t.text.clone()).collect(),
            sources: texts.iter().map(|t| t.source).collect(),
        })
        .collect()
}

/// Rebuilds per-image candidate sets, merging repeated pairs.
pub fn candidate_sets(records: &[CandidateRecord]) -> Result<BTreeMap<String, CandidateSet>, PipelineError> {
    let mut out: BTreeMap<String, CandidateSet> = BTreeMap::new();
    for r in records {
        if r.texts.len() != r.sources.len() {
            return Err(PipelineError::Input(format!(
                "image {:?} pair ({}, {}): {} texts but {} sources",
                r.image_id,
                r.subject_region_id,
                r.object_region_id,
                r.texts.len(),
                r.sources.len()
            )));
        }
        let set = out
            .entry(r.image_id.clone())
            .or_insert_with(|| CandidateSet::new(&r.image_id));
        for (t, s) in r.texts.iter().zip(&r.sources) {
            set.add(RegionPair::new(&r.subject_region_id, &r.object_region_id), t, *s);
        }
    }
    Ok(out)
}

/// Groups records by image id, keeping input order within each image.
pub fn by_image<T: Clone>(records: &[T], image_id: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<T>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for r in records {
        out.entry(image_id(r).to_string()).or_default().push(r.clone());
    }
    out
}
