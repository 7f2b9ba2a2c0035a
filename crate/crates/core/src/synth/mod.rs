//! Synthetic scene graphs with templated captions, for end-to-end checks of
//! the tagging pipeline against known ground truth.

mod bench;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{Caption, CaptionParser, CaptionSource, EntityAnnotation, Lexicon, SynonymTable};
use crate::geometry::{overlaps, BoundingBox};
use crate::seed::image_rng;

pub use bench::{
    bench_worlds, benchmark_taggers, format_table, oracle_scorer, BenchRow, OraclePromptScorer,
    TaggerVariant,
};

/// Entity classes and one synonym each.
pub const CLASSES: &[(&str, &str)] = &[
    ("man", "guy"),
    ("woman", "lady"),
    ("horse", "pony"),
    ("dog", "puppy"),
    ("cat", "kitten"),
    ("car", "automobile"),
    ("table", "desk"),
    ("chair", "seat"),
    ("cup", "mug"),
    ("hat", "cap"),
    ("bike", "bicycle"),
    ("boat", "ship"),
    ("bottle", "flask"),
    ("umbrella", "parasol"),
    ("plate", "dish"),
    ("laptop", "notebook"),
    ("phone", "cellphone"),
    ("bag", "backpack"),
    ("traffic light", "stoplight"),
    ("tree", "oak"),
    ("bench", "pew"),
    ("kite", "glider"),
    ("ball", "sphere"),
    ("bird", "sparrow"),
];

/// Relation vocabulary; `true` marks spatial relations, whose boxes always
/// overlap.
pub const RELATIONS: &[(&str, bool)] = &[
    ("riding", true),
    ("sitting on", true),
    ("standing on", true),
    ("holding", true),
    ("wearing", true),
    ("lying on", true),
    ("next to", false),
    ("near", false),
    ("behind", false),
    ("in front of", false),
    ("looking at", false),
    ("watching", false),
    ("facing", false),
    ("beside", false),
    ("above", false),
    ("chasing", false),
    ("following", false),
    ("walking toward", false),
    ("far from", false),
    ("across from", false),
];

pub fn is_spatial(relation: &str) -> bool {
    RELATIONS.iter().any(|(r, s)| *s && *r == relation)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid world configuration: {0}")]
pub struct WorldError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_images: usize,
    /// Inclusive range.
    pub entities_per_image: (usize, usize),
    pub n_classes: usize,
    /// Inclusive range; capped by the number of region pairs.
    pub relations_per_image: (usize, usize),
    /// Chance that each entity mention uses its synonym.
    pub synonym_prob: f64,
    /// Chance that a caption carries a second, false triplet.
    pub distractor_prob: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            entities_per_image: (3, 8),
            n_classes: 12,
            relations_per_image: (2, 5),
            synonym_prob: 0.2,
            distractor_prob: 0.3,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn noise_free(self) -> Self {
        Self {
            synonym_prob: 0.0,
            distractor_prob: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let (elo, ehi) = self.entities_per_image;
        let (rlo, rhi) = self.relations_per_image;
        if elo < 2 || elo > ehi {
            return Err(WorldError(format!("entities_per_image must satisfy 2 <= min <= max, got {elo}..={ehi}")));
        }
        if rlo > rhi {
            return Err(WorldError(format!("relations_per_image range {rlo}..={rhi} is empty")));
        }
        if self.n_classes == 0 || self.n_classes > CLASSES.len() {
            return Err(WorldError(format!("n_classes must be in 1..={}, got {}", CLASSES.len(), self.n_classes)));
        }
        for (name, p) in [("synonym_prob", self.synonym_prob), ("distractor_prob", self.distractor_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(WorldError(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<&'static str> {
        CLASSES[..self.n_classes].iter().map(|c| c.0).collect()
    }
}

/// A ground-truth relation between two regions of one image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GtTriplet {
    pub image_id: String,
    pub subject_region_id: String,
    pub object_region_id: String,
    pub relation: String,
}

impl GtTriplet {
    pub fn key(&self) -> (String, String, String, String) {
        (
            self.image_id.clone(),
            self.subject_region_id.clone(),
            self.object_region_id.clone(),
            self.relation.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Synonym { canonical: String, surface: String },
    Distractor { subject: String, relation: String, object: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEvent {
    pub image_id: String,
    /// Index into the image's captions.
    pub caption: usize,
    #[serde(flatten)]
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub image_id: String,
    pub entities: Vec<EntityAnnotation>,
    pub triplets: Vec<GtTriplet>,
    pub captions: Vec<Caption>,
    pub noise: Vec<NoiseEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: WorldConfig,
    pub images: Vec<SynthImage>,
    pub synonyms: SynonymTable,
}

impl SynthWorld {
    pub fn entities(&self) -> impl Iterator<Item = &EntityAnnotation> {
        self.images.iter().flat_map(|i| &i.entities)
    }

    pub fn triplets(&self) -> impl Iterator<Item = &GtTriplet> {
        self.images.iter().flat_map(|i| &i.triplets)
    }

    pub fn captions(&self) -> impl Iterator<Item = &Caption> {
        self.images.iter().flat_map(|i| &i.captions)
    }

    pub fn noise_events(&self) -> impl Iterator<Item = &NoiseEvent> {
        self.images.iter().flat_map(|i| &i.noise)
    }

    pub fn parser(&self) -> CaptionParser {
        CaptionParser::with_synonyms(Lexicon::bundled(), &self.synonyms)
    }
}

pub fn synonym_table(cfg: &WorldConfig) -> SynonymTable {
    let mut syn = SynonymTable::from_classes(cfg.classes());
    for (class, alt) in &CLASSES[..cfg.n_classes] {
        syn.insert(alt, class);
    }
    syn
}

pub fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

pub fn gen_world(cfg: &WorldConfig) -> Result<SynthWorld, WorldError> {
    cfg.validate()?;
    let images = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| gen_image(cfg, &image_id(i)))
        .collect();
    Ok(SynthWorld {
        config: *cfg,
        images,
        synonyms: synonym_table(cfg),
    })
}

fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let w = rng.gen_range(0.05..=0.25);
    let h = rng.gen_range(0.05..=0.25);
    let cx = rng.gen_range(w / 2.0..=1.0 - w / 2.0);
    let cy = rng.gen_range(h / 2.0..=1.0 - h / 2.0);
    BoundingBox::new(cx, cy, w, h).expect("positive size")
}

fn overlap(a: &EntityAnnotation, b: &EntityAnnotation) -> bool {
    overlaps(&a.bbox.to_corner(), &b.bbox.to_corner())
}

/// Moves `mover` so that it overlaps `anchor`, staying inside the image.
fn place_overlapping(anchor: &BoundingBox, mover: &BoundingBox, rng: &mut impl Rng) -> BoundingBox {
    let (w, h) = (mover.w(), mover.h());
    let clamp = |c: f64, half: f64| c.clamp(half, 1.0 - half);
    let dx = rng.gen_range(-0.8..=0.8) * (anchor.w() + w) / 2.0;
    let dy = rng.gen_range(-0.8..=0.8) * (anchor.h() + h) / 2.0;
    let moved = BoundingBox::new(clamp(anchor.cx() + dx, w / 2.0), clamp(anchor.cy() + dy, h / 2.0), w, h).expect("positive size");
    if overlaps(&anchor.to_corner(), &moved.to_corner()) {
        moved
    } else {
        // Centering on the anchor keeps the anchor's center inside the
        // mover even after clamping.
        BoundingBox::new(clamp(anchor.cx(), w / 2.0), clamp(anchor.cy(), h / 2.0), w, h).expect("positive size")
    }
}

fn gen_image(cfg: &WorldConfig, id: &str) -> SynthImage {
    let mut rng = image_rng(cfg.seed, id);
    let classes = cfg.classes();
    let n = rng.gen_range(cfg.entities_per_image.0..=cfg.entities_per_image.1);
    let mut entities: Vec<EntityAnnotation> = (0..n)
        .map(|r| EntityAnnotation {
            region_id: format!("r{r:02}"),
            image_id: id.to_string(),
            bbox: random_box(&mut rng),
            class_name: classes[rng.gen_range(0..classes.len())].to_string(),
        })
        .collect();

    let max_rel = n * (n - 1) / 2;
    let n_rel = rng.gen_range(cfg.relations_per_image.0..=cfg.relations_per_image.1).min(max_rel);
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut pinned = vec![false; n];
    let mut rels: Vec<(usize, usize, &str)> = Vec::new();
    let unordered = |a: usize, b: usize| (a.min(b), a.max(b));
    while rels.len() < n_rel {
        let (relation, spatial) = *RELATIONS.choose(&mut rng).expect("non-empty");
        let free: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && !used.contains(&unordered(a, b)))
            .collect();
        let pick = if spatial {
            let touching: Vec<_> = free.iter().copied().filter(|&(a, b)| overlap(&entities[a], &entities[b])).collect();
            if let Some(&p) = touching.choose(&mut rng) {
                Some(p)
            } else {
                let movable: Vec<_> = free.iter().copied().filter(|&(_, b)| !pinned[b]).collect();
                movable.choose(&mut rng).map(|&(a, b)| {
                    entities[b].bbox = place_overlapping(&entities[a].bbox, &entities[b].bbox, &mut rng);
                    (a, b)
                })
            }
        } else {
            free.choose(&mut rng).copied()
        };
        let Some((a, b)) = pick else {
            // Every remaining pair needs a pinned region moved; fall back to
            // a non-spatial relation.
            if free.is_empty() {
                break;
            }
            continue;
        };
        if spatial {
            pinned[a] = true;
            pinned[b] = true;
        }
        used.insert(unordered(a, b));
        rels.push((a, b, relation));
    }

    let triplets: Vec<GtTriplet> = rels
        .iter()
        .map(|&(a, b, r)| GtTriplet {
            image_id: id.to_string(),
            subject_region_id: entities[a].region_id.clone(),
            object_region_id: entities[b].region_id.clone(),
            relation: r.to_string(),
        })
        .collect();

    let synonym_of = |class: &str| CLASSES.iter().find(|c| c.0 == class).map(|c| c.1).expect("bundled class");
    let class_triplets: BTreeSet<(&str, &str, &str)> = rels
        .iter()
        .map(|&(a, b, r)| (entities[a].class_name.as_str(), r, entities[b].class_name.as_str()))
        .collect();
    let mut captions = Vec::with_capacity(rels.len());
    let mut noise = Vec::new();
    for (ci, &(a, b, r)) in rels.iter().enumerate() {
        let mention = |class: &str, rng: &mut rand_chacha::ChaCha8Rng, noise: &mut Vec<NoiseEvent>| -> String {
            if cfg.synonym_prob > 0.0 && rng.gen_bool(cfg.synonym_prob) {
                let surface = synonym_of(class).to_string();
                noise.push(NoiseEvent {
                    image_id: id.to_string(),
                    caption: ci,
                    kind: NoiseKind::Synonym {
                        canonical: class.to_string(),
                        surface: surface.clone(),
                    },
                });
                surface
            } else {
                class.to_string()
            }
        };
        let s = mention(&entities[a].class_name, &mut rng, &mut noise);
        let o = mention(&entities[b].class_name, &mut rng, &mut noise);
        let mut text = format!("a {s} {r} a {o}");
        if cfg.distractor_prob > 0.0 && rng.gen_bool(cfg.distractor_prob) {
            if let Some((ds, dr, dobj)) = pick_distractor(&entities, &class_triplets, &mut rng) {
                text.push_str(&format!(" and a {ds} {dr} a {dobj}"));
                noise.push(NoiseEvent {
                    image_id: id.to_string(),
                    caption: ci,
                    kind: NoiseKind::Distractor {
                        subject: ds,
                        relation: dr.to_string(),
                        object: dobj,
                    },
                });
            }
        }
        captions.push(Caption {
            image_id: id.to_string(),
            text,
            source: CaptionSource::Oracle,
        });
    }
    SynthImage {
        image_id: id.to_string(),
        entities,
        triplets,
        captions,
        noise,
    }
}

/// A class-level triplet over two regions of the image that no ground truth
/// asserts (in either orientation), preferring regions whose boxes are
/// disjoint.
fn pick_distractor(
    entities: &[EntityAnnotation],
    truth: &BTreeSet<(&str, &str, &str)>,
    rng: &mut impl Rng,
) -> Option<(String, &'static str, String)> {
    let n = entities.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|(a, b)| a != b).collect();
    let (disjoint, touching): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|&(a, b)| !overlap(&entities[a], &entities[b]));
    for pool in [disjoint, touching] {
        let mut options = Vec::new();
        for &(a, b) in &pool {
            let (sa, sb) = (entities[a].class_name.as_str(), entities[b].class_name.as_str());
            for &(r, _) in RELATIONS {
                if !truth.contains(&(sa, r, sb)) && !truth.contains(&(sb, r, sa)) {
                    options.push((a, b, r));
                }
            }
        }
        if let Some(&(a, b, r)) = options.choose(rng) {
            return Some((entities[a].class_name.clone(), r, entities[b].class_name.clone()));
        }
    }
    None
}
