use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context as _, Result};
use reltag_core::caption::{Caption, CandidateOptions, EntityAnnotation, SynonymTable};
use reltag_core::fusion::{build_denoise_mask, noise_groups, RegionQuery};
use reltag_core::matching::{evaluate_loss, FocalParams, GroundTruthTriplet, PredictedTriplet};
use reltag_core::metrics::{hoi_map, parse_rare_categories, score_wtd, sgg_metrics, topk_per_image, DetectionRecord};
use reltag_core::pipeline::{
    by_image, candidate_records, candidate_sets, gen_candidates, parse_captions, tag_images, write_jsonl,
    CandidateRecord, GroundedRecord, PipelineConfig, PipelineError, Tagger,
};
use reltag_core::seed::image_rng;
use reltag_core::synth::{bench_worlds, format_table, gen_world, GtTriplet, WorldConfig};
use reltag_core::tagging::{
    OracleBackend, PromptScoreRecord, PromptScoreTable, RandomProjectionScorer, ScoreRecord, ScoreTable,
    ScorerBackend, TaggerKind,
};
use serde_json::{json, Value};

use crate::io::{read_entity_file, read_records, read_text, write_text};
use crate::{BackendKind, Command, EvalMode};

pub struct Context {
    pub cfg: PipelineConfig,
    pub strict: bool,
}

fn contract(msg: impl Into<String>) -> anyhow::Error {
    PipelineError::Contract(msg.into()).into()
}

fn input(msg: impl Into<String>) -> anyhow::Error {
    PipelineError::Input(msg.into()).into()
}

/// Structured report with the configuration it was produced under.
fn report(ctx: &Context, command: &str, body: Value) -> String {
    let mut s = serde_json::to_string_pretty(&json!({
        "command": command,
        "config": ctx.cfg,
        "report": body,
    }))
    .expect("report serializes");
    s.push('\n');
    s
}

pub fn run(ctx: &Context, command: Command) -> Result<()> {
    match command {
        Command::ParseCaptions {
            captions,
            entities,
            synonyms,
            out,
        } => parse_cmd(ctx, &captions, &entities, synonyms.as_deref(), &out),
        Command::GenCandidates { triplets, entities, out } => candidates_cmd(ctx, &triplets, &entities, &out),
        Command::Tag {
            candidates,
            triplets,
            entities,
            backend,
            gt,
            scores,
            prompt_scores,
            out,
        } => {
            let args = TagArgs {
                candidates: candidates.as_deref(),
                triplets: triplets.as_deref(),
                entities: &entities,
                backend,
                gt: gt.as_deref(),
                scores: scores.as_deref(),
                prompt_scores: prompt_scores.as_deref(),
            };
            tag_cmd(ctx, &args, &out)
        }
        Command::Eval {
            predictions,
            gt,
            mode,
            rare,
            k,
            out,
        } => eval_cmd(ctx, &predictions, &gt, mode, rare.as_deref(), k, &out),
        Command::Bench {
            worlds,
            images,
            classes,
            synonym_prob,
            distractor_prob,
            records,
        } => {
            let wcfg = WorldConfig {
                n_images: images,
                n_classes: classes,
                synonym_prob,
                distractor_prob,
                seed: ctx.cfg.seed,
                ..Default::default()
            };
            bench_cmd(ctx, &wcfg, worlds, records.as_deref())
        }
        Command::LossEval { input, out } => loss_cmd(ctx, &input, &out),
        Command::NoiseDemo { entities, groups, out } => noise_cmd(ctx, &entities, groups, &out),
        Command::GenWorld {
            out_dir,
            images,
            classes,
            synonym_prob,
            distractor_prob,
        } => {
            let wcfg = WorldConfig {
                n_images: images,
                n_classes: classes,
                synonym_prob,
                distractor_prob,
                seed: ctx.cfg.seed,
                ..Default::default()
            };
            world_cmd(&wcfg, &out_dir)
        }
    }
}

fn read_synonyms(path: Option<&Path>, ents: &[EntityAnnotation]) -> Result<SynonymTable> {
    match path {
        None => Ok(SynonymTable::from_classes(ents.iter().map(|e| e.class_name.as_str()))),
        Some(p) => {
            let mut syn = SynonymTable::parse_tsv(&read_text(p)?).map_err(|e| input(format!("{}: {e}", p.display())))?;
            for e in ents {
                syn.add_class(&e.class_name);
            }
            Ok(syn)
        }
    }
}

fn parse_cmd(ctx: &Context, captions: &Path, entities: &Path, synonyms: Option<&Path>, out: &Path) -> Result<()> {
    let caps: Vec<Caption> = read_records(captions, ctx.strict)?;
    let ents = read_entity_file(entities, ctx.strict)?;
    let syn = read_synonyms(synonyms, &ents)?;
    let grounded = parse_captions(&caps, &ents, &syn)?;
    eprintln!(
        "captions: {}, images: {}, grounded triplets: {}",
        caps.len(),
        by_image(&caps, |c| &c.image_id).len(),
        grounded.len()
    );
    write_text(out, &write_jsonl(&grounded))
}


fn candidates_cmd(ctx: &Context, triplets: &Path, entities: &Path, out: &Path) -> Result<()> {
    let grounded: Vec<GroundedRecord> = read_records(triplets, ctx.strict)?;
    let ents = read_entity_file(entities, ctx.strict)?;
    let opts = CandidateOptions::default().with_overlap_prior(ctx.cfg.overlap_prior);
    let sets = gen_candidates(&grounded, &ents, &opts)?;
    let recs: Vec<CandidateRecord> = sets.values().flat_map(candidate_records).collect();
    eprintln!(
        "images: {}, pairs: {}, texts: {}",
        sets.len(),
        recs.len(),
        sets.values().map(|s| s.text_count()).sum::<usize>()
    );
    write_text(out, &write_jsonl(&recs))
}

struct TagArgs<'a> {
    candidates: Option<&'a Path>,
    triplets: Option<&'a Path>,
    entities: &'a Path,
    backend: BackendKind,
    gt: Option<&'a Path>,
    scores: Option<&'a Path>,
    prompt_scores: Option<&'a Path>,
}

fn tag_cmd(ctx: &Context, args: &TagArgs<'_>, out: &Path) -> Result<()> {
    let ents = read_entity_file(args.entities, ctx.strict)?;
    let sets = match (args.candidates, args.triplets) {
        (Some(c), None) => candidate_sets(&read_records::<CandidateRecord>(c, ctx.strict)?)?,
        (None, Some(t)) => {
            let grounded: Vec<GroundedRecord> = read_records(t, ctx.strict)?;
            // The tagger applies the overlap prior itself.
            gen_candidates(&grounded, &ents, &CandidateOptions::default().with_overlap_prior(false))?
        }
        _ => return Err(input("give exactly one of --candidates or --triplets")),
    };
    let cfg = ctx.cfg.tagger_config();
    let run = match ctx.cfg.tagger {
        TaggerKind::Greedy => tag_images(&sets, &ents, &Tagger::Greedy { seed: ctx.cfg.seed }, &cfg)?,
        TaggerKind::ClipStyle => {
            let path = args
                .prompt_scores
                .ok_or_else(|| contract("the clip_style tagger needs --prompt-scores"))?;
            let table = PromptScoreTable::from_records(read_records::<PromptScoreRecord>(path, ctx.strict)?);
            tag_images(&sets, &ents, &Tagger::ClipStyle(&table), &cfg)?
        }
        TaggerKind::Rtagger => {
            let backend: Box<dyn ScorerBackend> = match args.backend {
                BackendKind::Random => Box::new(RandomProjectionScorer::new(ctx.cfg.seed)),
                BackendKind::Oracle => {
                    let path = args.gt.ok_or_else(|| contract("the oracle backend needs --gt"))?;
                    let gt: Vec<GtTriplet> = read_records(path, ctx.strict)?;
                    Box::new(OracleBackend::new(gt.iter().map(GtTriplet::key)))
                }
                BackendKind::File => {
                    let path = args.scores.ok_or_else(|| contract("the file backend needs --scores"))?;
                    let recs: Vec<ScoreRecord> = read_records(path, ctx.strict)?;
                    Box::new(ScoreTable::from_records(recs).map_err(|e| input(format!("{}: {e}", path.display())))?)
                }
            };
            tag_images(&sets, &ents, &Tagger::Rtagger(backend.as_ref()), &cfg)?
        }
    };
    let s = &run.summary;
    eprintln!(
        "tagger: {}, images: {}, pairs: {}, candidate texts: {}, labels: {}, retention at eta {}: {:.4}",
        ctx.cfg.tagger, s.images, s.pairs, s.candidate_texts, s.labels, ctx.cfg.eta, s.retention
    );
    write_text(out, &write_jsonl(&run.labels))
}

fn eval_cmd(
    ctx: &Context,
    predictions: &Path,
    gt: &Path,
    mode: EvalMode,
    rare: Option<&Path>,
    k: usize,
    out: &Path,
) -> Result<()> {
    let preds: Vec<DetectionRecord> = read_records(predictions, ctx.strict)?;
    let gts: Vec<DetectionRecord> = read_records(gt, ctx.strict)?;
    let preds = topk_per_image(&preds, ctx.cfg.top_k);
    let body = match mode {
        EvalMode::Hoi => {
            let path = rare.ok_or_else(|| contract("hoi evaluation needs --rare"))?;
            let rare = parse_rare_categories(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
            let r = hoi_map(&preds, &gts, &rare, 0.5).map_err(|e| input(e.to_string()))?;
            eprintln!("hoi mAP full {:.2} rare {:.2} non-rare {:.2}", r.full, r.rare, r.nonrare);
            serde_json::to_value(r)?
        }
        EvalMode::Sgg => {
            if rare.is_some() {
                return Err(contract("--rare applies to hoi evaluation only"));
            }
            let r = sgg_metrics(&preds, &gts, k).map_err(|e| input(e.to_string()))?;
            let check = score_wtd(r.r50, r.wmap_rel, r.wmap_phr);
            if (check - r.score_wtd).abs() > 1e-9 {
                return Err(contract(format!("score_wtd {} disagrees with its components ({check})", r.score_wtd)));
            }
            eprintln!(
                "R@{k} {:.2} mR@{k} {:.2} wmAP_rel {:.2} wmAP_phr {:.2} score_wtd {:.2}",
                r.r50, r.mr50, r.wmap_rel, r.wmap_phr, r.score_wtd
            );
            serde_json::to_value(r)?
        }
    };
    let mode = match mode {
        EvalMode::Hoi => "hoi",
        EvalMode::Sgg => "sgg",
    };
    write_text(out, &report(ctx, &format!("eval {mode}"), body))
}

fn bench_cmd(ctx: &Context, wcfg: &WorldConfig, worlds: usize, records: Option<&Path>) -> Result<()> {
    wcfg.validate().map_err(|e| contract(e.to_string()))?;
    let rows = bench_worlds(wcfg, worlds, &ctx.cfg.tagger_config()).map_err(|e| contract(e.to_string()))?;
    print!("{}", format_table(&rows));
    if let Some(path) = records {
        write_text(path, &write_jsonl(&rows))?;
    }
    Ok(())
}

fn loss_cmd(ctx: &Context, input_path: &Path, out: &Path) -> Result<()> {
    let doc: Value = serde_json::from_str(&read_text(input_path)?)
        .map_err(|e| input(format!("{}: {e}", input_path.display())))?;
    let field = |name: &str| doc.get(name).cloned().ok_or_else(|| input(format!("missing {name:?}")));
    let preds: Vec<PredictedTriplet> =
        serde_json::from_value(field("predictions")?).map_err(|e| input(format!("predictions: {e}")))?;
    let gts: Vec<GroundTruthTriplet> =
        serde_json::from_value(field("ground_truth")?).map_err(|e| input(format!("ground_truth: {e}")))?;
    let r = evaluate_loss(&preds, &gts, &ctx.cfg.lambda, &FocalParams::default()).map_err(|e| contract(e.to_string()))?;
    eprintln!(
        "matched pairs: {}, total loss: {:.6}",
        r.matching.assignment.len(),
        r.total
    );
    write_text(out, &report(ctx, "loss-eval", serde_json::to_value(r)?))
}

fn noise_cmd(ctx: &Context, entities: &Path, groups: usize, out: &Path) -> Result<()> {
    if groups == 0 {
        return Err(contract("--groups must be at least 1"));
    }
    let ents = read_entity_file(entities, ctx.strict)?;
    let vocab: Vec<&str> = {
        let mut v: Vec<&str> = ents.iter().map(|e| e.class_name.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let label_of = |c: &str| vocab.binary_search(&c).expect("class from the same file");
    let noise = ctx.cfg.noise_config();
    let mut lines = Vec::new();
    let (mut flips, mut total, mut blocked) = (0usize, 0usize, 0usize);
    for (id, es) in by_image(&ents, |e| &e.image_id) {
        let regions: Vec<_> = es.iter().map(|e| (e.region_id.clone(), e.bbox, label_of(&e.class_name))).collect();
        let noised = noise_groups(&regions, groups, vocab.len().max(1), &noise, &mut image_rng(ctx.cfg.seed, &id))
            .map_err(|e| contract(e.to_string()))?;
        let queries: Vec<RegionQuery> = noised
            .iter()
            .map(|n| RegionQuery {
                region_id: n.region_id.clone(),
                embedding: Default::default(),
                group_index: n.group_index,
            })
            .collect();
        blocked += build_denoise_mask(&queries).blocked_count();
        let original: BTreeMap<&str, usize> = regions.iter().map(|(r, _, l)| (r.as_str(), *l)).collect();
        for n in &noised {
            total += 1;
            if original[n.region_id.as_str()] != n.label {
                flips += 1;
            }
            lines.push(json!({
                "image_id": id,
                "region_id": n.region_id,
                "group_index": n.group_index,
                "box": n.bbox,
                "class_name": vocab[n.label],
            }));
        }
    }
    eprintln!(
        "noised queries: {total}, label flips: {flips} ({:.4}), blocked mask entries: {blocked}",
        if total == 0 { 0.0 } else { flips as f64 / total as f64 }
    );
    write_text(out, &write_jsonl(&lines))
}

fn world_cmd(wcfg: &WorldConfig, dir: &Path) -> Result<()> {
    let world = gen_world(wcfg).map_err(|e| contract(e.to_string()))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, text: String| write_text(&dir.join(name), &text);
    write("entities.jsonl", write_jsonl(world.entities()))?;
    write("captions.jsonl", write_jsonl(world.captions()))?;
    write("gt_triplets.jsonl", write_jsonl(world.triplets()))?;
    write("noise_events.jsonl", write_jsonl(world.noise_events()))?;
    write("synonyms.tsv", world.synonyms.to_tsv())?;
    let mut cfg = serde_json::to_string_pretty(&world.config)?;
    cfg.push('\n');
    write("world.json", cfg)?;
    eprintln!(
        "images: {}, entities: {}, triplets: {}, captions: {}",
        world.images.len(),
        world.entities().count(),
        world.triplets().count(),
        world.captions().count()
    );
    Ok(())
}
