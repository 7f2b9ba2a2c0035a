use std::collections::HashSet;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{gen_world, SynthImage, SynthWorld, WorldConfig, WorldError};
use crate::caption::{candidates_from_captions, CandidateOptions, CaptionParser};
use crate::seed::image_rng;
use crate::tagging::{
    clip_style_tag, greedy_tag, rtagger_infer, BackendError, ImageContext, OracleBackend, PromptQuery,
    PromptScorer, PseudoLabel, TagError, TaggerConfig,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// Scorer that knows the world's ground truth.
pub fn oracle_scorer(world: &SynthWorld) -> OracleBackend {
    OracleBackend::new(world.triplets().map(|t| t.key()))
}

/// Prompt scorer that favours the positive prompt for true triplets only.
#[derive(Debug, Clone)]
pub struct OraclePromptScorer {
    truth: HashSet<(String, String, String, String)>,
}

impl OraclePromptScorer {
    /// Raw score gap; `sigmoid(±GAP)` lands on either side of the default
    /// prompt threshold.
    pub const GAP: f64 = 2.0;

    pub fn new(world: &SynthWorld) -> Self {
        Self {
            truth: world.triplets().map(|t| t.key()).collect(),
        }
    }
}

impl PromptScorer for OraclePromptScorer {
    fn score(&self, q: &PromptQuery<'_>) -> Result<(f64, f64), BackendError> {
        let key = (
            q.image_id.to_string(),
            q.pair.subject.clone(),
            q.pair.object.clone(),
            q.relation_text.to_string(),
        );
        Ok(if self.truth.contains(&key) {
            (Self::GAP, 0.0)
        } else {
            (-Self::GAP, 0.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaggerVariant {
    Greedy,
    ClipStyleOracle,
    RtaggerOracle,
}

impl TaggerVariant {
    pub const ALL: [TaggerVariant; 3] = [Self::Greedy, Self::ClipStyleOracle, Self::RtaggerOracle];
}

impl fmt::Display for TaggerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::ClipStyleOracle => "clip_style(oracle)",
            Self::RtaggerOracle => "rtagger(oracle)",
        })
    }
}

/// Precision and recall of one tagger setting against ground truth. Over
/// several worlds the rates are per-world means and counts are totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub tagger: TaggerVariant,
    pub overlap_prior: bool,
    pub labels: usize,
    pub correct: usize,
    pub gt: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BenchRow {
    fn from_counts(tagger: TaggerVariant, overlap_prior: bool, labels: usize, correct: usize, gt: usize) -> Self {
        let precision = if labels == 0 { 0.0 } else { correct as f64 / labels as f64 };
        let recall = if gt == 0 { 0.0 } else { correct as f64 / gt as f64 };
        Self {
            tagger,
            overlap_prior,
            labels,
            correct,
            gt,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn settings() -> impl Iterator<Item = (TaggerVariant, bool)> {
    TaggerVariant::ALL.into_iter().flat_map(|t| [(t, false), (t, true)])
}

fn tag_image(
    img: &SynthImage,
    world: &SynthWorld,
    parser: &CaptionParser,
    oracle: &OracleBackend,
    prompts: &OraclePromptScorer,
    cfg: &TaggerConfig,
    seed: u64,
) -> Result<Vec<(usize, usize)>, TagError> {
    let cands = candidates_from_captions(
        &img.image_id,
        parser,
        &img.captions,
        &img.entities,
        &world.synonyms,
        &CandidateOptions::default(),
    );
    let ctx = ImageContext::new(&img.image_id, &img.entities);
    let truth: HashSet<_> = img.triplets.iter().map(|t| t.key()).collect();
    let count = |labels: &[PseudoLabel]| labels.iter().filter(|l| truth.contains(&l.key())).count();
    settings()
        .map(|(variant, prior)| {
            let cfg = TaggerConfig {
                overlap_prior: prior,
                ..*cfg
            };
            let out = match variant {
                TaggerVariant::Greedy => greedy_tag(&cands, &ctx, &mut image_rng(seed, &img.image_id), &cfg)?,
                TaggerVariant::ClipStyleOracle => clip_style_tag(&cands, &ctx, prompts, &cfg)?,
                TaggerVariant::RtaggerOracle => rtagger_infer(&cands, &ctx, oracle, &cfg)?,
            };
            Ok((out.labels.len(), count(&out.labels)))
        })
        .collect()
}

/// Tags every image of `world` with each tagger, with and without the
/// overlap prior, and scores the labels against ground truth.
pub fn benchmark_taggers(world: &SynthWorld, cfg: &TaggerConfig, seed: u64) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    let parser = world.parser();
    let oracle = oracle_scorer(world);
    let prompts = OraclePromptScorer::new(world);
    let per_image: Vec<Vec<(usize, usize)>> = world
        .images
        .par_iter()
        .map(|img| tag_image(img, world, &parser, &oracle, &prompts, cfg, seed))
        .collect::<Result<_, _>>()?;
    let gt = world.triplets().count();
    Ok(settings()
        .enumerate()
        .map(|(k, (variant, prior))| {
            let (labels, correct) = per_image
                .iter()
                .fold((0, 0), |(l, c), row| (l + row[k].0, c + row[k].1));
            BenchRow::from_counts(variant, prior, labels, correct, gt)
        })
        .collect())
}

/// Benchmarks `n_worlds` worlds seeded `cfg.seed, cfg.seed + 1, …` and
/// averages the per-world rates.
pub fn bench_worlds(cfg: &WorldConfig, n_worlds: usize, tagger: &TaggerConfig) -> Result<Vec<BenchRow>, BenchError> {
    let runs: Vec<Vec<BenchRow>> = (0..n_worlds as u64)
        .into_par_iter()
        .map(|k| {
            let wcfg = WorldConfig {
                seed: cfg.seed.wrapping_add(k),
                ..*cfg
            };
            let world = gen_world(&wcfg)?;
            benchmark_taggers(&world, tagger, wcfg.seed)
        })
        .collect::<Result<_, _>>()?;
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let n = runs.len() as f64;
    Ok((0..first.len())
        .map(|k| {
            let rows: Vec<&BenchRow> = runs.iter().map(|r| &r[k]).collect();
            let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            BenchRow {
                tagger: first[k].tagger,
                overlap_prior: first[k].overlap_prior,
                labels: rows.iter().map(|r| r.labels).sum(),
                correct: rows.iter().map(|r| r.correct).sum(),
                gt: rows.iter().map(|r| r.gt).sum(),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f1: mean(|r| r.f1),
            }
        })
        .collect())
}

/// Fixed-width text rendering of benchmark rows.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:<7} {:>9} {:>7} {:>9} {:>8} {:>8} {:>8}",
        "tagger", "overlap", "labels", "gt", "correct", "prec", "recall", "f1"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<20} {:<7} {:>9} {:>7} {:>9} {:>8.4} {:>8.4} {:>8.4}",
            r.tagger.to_string(),
            if r.overlap_prior { "on" } else { "off" },
            r.labels,
            r.gt,
            r.correct,
            r.precision,
            r.recall,
            r.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rows: &[BenchRow], t: TaggerVariant, prior: bool) -> &BenchRow {
        rows.iter().find(|r| r.tagger == t && r.overlap_prior == prior).unwrap()
    }

    #[test]
    fn oracle_recovers_noise_free_world() {
        let w = gen_world(&WorldConfig { n_images: 50, seed: 9, ..Default::default() }.noise_free()).unwrap();
        let rows = benchmark_taggers(&w, &TaggerConfig::default(), 9).unwrap();
        let r = row(&rows, TaggerVariant::RtaggerOracle, false);
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        let c = row(&rows, TaggerVariant::ClipStyleOracle, false);
        assert_eq!((c.precision, c.recall), (1.0, 1.0));
    }

    #[test]
    fn deterministic_table() {
        let cfg = WorldConfig { n_images: 30, seed: 2, ..Default::default() };
        let a = bench_worlds(&cfg, 3, &TaggerConfig::default()).unwrap();
        let b = bench_worlds(&cfg, 3, &TaggerConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(format_table(&a), format_table(&b));
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn f1_edges() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(f1(1.0, 1.0), 1.0);
        let r = BenchRow::from_counts(TaggerVariant::Greedy, false, 0, 0, 5);
        assert_eq!((r.precision, r.recall), (0.0, 0.0));
    }
}
