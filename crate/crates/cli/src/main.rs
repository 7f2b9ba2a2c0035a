mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reltag_core::pipeline::{PipelineConfig, PipelineError};

/// Relation pseudo-labelling and evaluation toolkit.
#[derive(Debug, Parser)]
#[command(name = "reltag", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the pipeline configuration. Flags win over `--config`.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n_q: Option<usize>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    clip_threshold: Option<f64>,
    #[arg(long, global = true)]
    box_scale: Option<f64>,
    #[arg(long, global = true)]
    label_flip_prob: Option<f64>,
    /// Four comma-separated loss weights: l1, giou, ce, focal.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    n_v: Option<usize>,
    #[arg(long, global = true)]
    n_alif: Option<usize>,
    #[arg(long, global = true)]
    check_alif_grid: Option<bool>,
    #[arg(long, global = true)]
    overlap_prior: Option<bool>,
    /// greedy, clip_style or rtagger.
    #[arg(long, global = true)]
    tagger: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Fail on malformed input lines instead of skipping them.
    #[arg(long, global = true)]
    strict: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
            cfg.apply_kv_text(&text)?;
        }
        let flags: [(&str, Option<String>); 14] = [
            ("n_q", self.n_q.map(|v| v.to_string())),
            ("eta", self.eta.map(|v| v.to_string())),
            ("top_k", self.top_k.map(|v| v.to_string())),
            ("clip_threshold", self.clip_threshold.map(|v| v.to_string())),
            ("box_scale", self.box_scale.map(|v| v.to_string())),
            ("label_flip_prob", self.label_flip_prob.map(|v| v.to_string())),
            ("lambda", self.lambda.clone()),
            ("n_v", self.n_v.map(|v| v.to_string())),
            ("n_alif", self.n_alif.map(|v| v.to_string())),
            ("check_alif_grid", self.check_alif_grid.map(|v| v.to_string())),
            ("overlap_prior", self.overlap_prior.map(|v| v.to_string())),
            ("tagger", self.tagger.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Hoi,
    Sgg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Seeded random-projection scorer.
    Random,
    /// Ground-truth scorer; needs `--gt`.
    Oracle,
    /// Precomputed scores; needs `--scores`.
    File,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse captions and ground their triplets to image entities.
    ParseCaptions {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        /// `surface<TAB>canonical` lines.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Expand grounded triplets into candidate region pairs.
    GenCandidates {
        #[arg(long)]
        triplets: PathBuf,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Assign relation texts to candidate pairs.
    Tag {
        #[arg(long, conflicts_with = "triplets")]
        candidates: Option<PathBuf>,
        /// Grounded triplets, expanded to candidates on the fly.
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, value_enum, default_value = "random")]
        backend: BackendKind,
        /// Ground-truth triplets for the oracle backend.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Relation score records for the file backend.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Prompt score records for the clip_style tagger.
        #[arg(long)]
        prompt_scores: Option<PathBuf>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        /// Rare categories, `relation<TAB>object_class` per line (hoi only).
        #[arg(long)]
        rare: Option<PathBuf>,
        /// Recall cutoff for sgg.
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Compare taggers on synthetic worlds.
    Bench {
        #[arg(long, default_value_t = 10)]
        worlds: usize,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value_t = 0.2)]
        synonym_prob: f64,
        #[arg(long, default_value_t = 0.3)]
        distractor_prob: f64,
        /// Write one JSON record per row here as well.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Matching loss of predictions against ground truth.
    LossEval {
        /// JSON document `{"predictions": [...], "ground_truth": [...]}`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Noised replicas of entity boxes and their attention mask.
    NoiseDemo {
        #[arg(long)]
        entities: PathBuf,
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Write a synthetic world in the input file formats.
    GenWorld {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        #[arg(long, default_value_t = 0.2)]
        synonym_prob: f64,
        #[arg(long, default_value_t = 0.3)]
        distractor_prob: f64,
    },
}

/// Exit status for a failure: 1 for input problems, 2 for contract
/// violations.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(PipelineError::Contract(_)) = cause.downcast_ref::<PipelineError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli
        .config
        .resolve()
        .map_err(anyhow::Error::from)
        .and_then(|cfg| {
            let ctx = commands::Context {
                cfg,
                strict: cli.config.strict,
            };
            reltag_core::pipeline::with_workers(ctx.cfg.workers, || commands::run(&ctx, cli.command))?
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("reltag").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_reach_the_config() {
        let cli = parse(&["bench", "--eta", "0.35", "--lambda", "1,2,3,4", "--tagger", "greedy"]);
        let cfg = cli.config.resolve().unwrap();
        assert_eq!(cfg.eta, 0.35);
        assert_eq!(cfg.lambda.focal, 4.0);
        assert_eq!(cfg.tagger.to_string(), "greedy");
        assert_eq!(cfg.n_q, 100);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let contract = anyhow::Error::from(PipelineError::Contract("x".into())).context("while tagging");
        assert_eq!(exit_code(&contract), 2);
        assert_eq!(exit_code(&PipelineError::Input("x".into()).into()), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
        let bad = parse(&["bench", "--n-q", "0"]).config.resolve().unwrap_err();
        assert_eq!(exit_code(&bad.into()), 2);
    }
}
