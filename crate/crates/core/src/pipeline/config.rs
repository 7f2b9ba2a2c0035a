use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fusion::{AlifConfig, NoiseConfig};
use crate::matching::LossWeights;
use crate::tagging::{TaggerConfig, TaggerKind};

/// Every tunable of the pipeline. Any field can be set from a `key = value`
/// file and from command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_q: usize,
    pub eta: f64,
    pub top_k: usize,
    pub clip_threshold: f64,
    pub box_scale: f64,
    pub label_flip_prob: f64,
    pub lambda: LossWeights,
    pub n_v: usize,
    pub n_alif: usize,
    /// Require `n_v · n_alif = 6`.
    pub check_alif_grid: bool,
    pub overlap_prior: bool,
    pub tagger: TaggerKind,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TaggerConfig::default();
        let n = NoiseConfig::default();
        let a = AlifConfig::default();
        Self {
            n_q: t.n_q,
            eta: t.eta,
            top_k: t.top_k,
            clip_threshold: t.clip_threshold,
            box_scale: n.box_scale,
            label_flip_prob: n.label_flip_prob,
            lambda: LossWeights::default(),
            n_v: a.n_v,
            n_alif: a.n_alif,
            check_alif_grid: true,
            overlap_prior: t.overlap_prior,
            tagger: TaggerKind::Rtagger,
            seed: 0,
            workers: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "n_q",
    "eta",
    "top_k",
    "clip_threshold",
    "box_scale",
    "label_flip_prob",
    "lambda",
    "lambda_l1",
    "lambda_giou",
    "lambda_ce",
    "lambda_focal",
    "n_v",
    "n_alif",
    "check_alif_grid",
    "overlap_prior",
    "tagger",
    "seed",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Contract(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(PipelineError::Contract(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let value = value.trim();
        match key.trim() {
            "n_q" => self.n_q = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "clip_threshold" => self.clip_threshold = parse(key, value)?,
            "box_scale" => self.box_scale = parse(key, value)?,
            "label_flip_prob" => self.label_flip_prob = parse(key, value)?,
            "lambda" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_, _>>()?;
                let [l1, giou, ce, focal] = parts[..] else {
                    return Err(PipelineError::Contract(format!("lambda: expected 4 comma-separated values, got {value:?}")));
                };
                self.lambda = LossWeights { l1, giou, ce, focal };
            }
            "lambda_l1" => self.lambda.l1 = parse(key, value)?,
            "lambda_giou" => self.lambda.giou = parse(key, value)?,
            "lambda_ce" => self.lambda.ce = parse(key, value)?,
            "lambda_focal" => self.lambda.focal = parse(key, value)?,
            "n_v" => self.n_v = parse(key, value)?,
            "n_alif" => self.n_alif = parse(key, value)?,
            "check_alif_grid" => self.check_alif_grid = parse_bool(key, value)?,
            "overlap_prior" => self.overlap_prior = parse_bool(key, value)?,
            "tagger" => self.tagger = value.parse().map_err(|e: crate::tagging::TagError| PipelineError::Contract(e.to_string()))?,
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            other => return Err(PipelineError::Contract(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file: one setting per line, `#` starts a
    /// comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(PipelineError::Input(format!("config line {}: expected key = value", i + 1)));
            };
            self.set(k, v)
                .map_err(|e| PipelineError::Contract(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let l = &self.lambda;
        format!(
            "n_q = {}\neta = {}\ntop_k = {}\nclip_threshold = {}\nbox_scale = {}\nlabel_flip_prob = {}\nlambda = {}, {}, {}, {}\nn_v = {}\nn_alif = {}\ncheck_alif_grid = {}\noverlap_prior = {}\ntagger = {}\nseed = {}\nworkers = {}\n",
            self.n_q,
            self.eta,
            self.top_k,
            self.clip_threshold,
            self.box_scale,
            self.label_flip_prob,
            l.l1,
            l.giou,
            l.ce,
            l.focal,
            self.n_v,
            self.n_alif,
            self.check_alif_grid,
            self.overlap_prior,
            self.tagger,
            self.seed,
            self.workers
        )
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let contract = |e: String| PipelineError::Contract(e);
        self.tagger_config().validate().map_err(|e| contract(e.to_string()))?;
        self.noise_config().validate().map_err(|e| contract(e.to_string()))?;
        self.lambda.validate().map_err(|e| contract(e.to_string()))?;
        let alif = self.alif_config();
        if self.check_alif_grid {
            alif.validate_grid()
        } else {
            alif.validate()
        }
        .map_err(|e| contract(e.to_string()))?;
        if self.top_k == 0 {
            return Err(contract("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tagger_config(&self) -> TaggerConfig {
        TaggerConfig {
            n_q: self.n_q,
            eta: self.eta,
            overlap_prior: self.overlap_prior,
            clip_threshold: self.clip_threshold,
            top_k: self.top_k,
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            box_scale: self.box_scale,
            label_flip_prob: self.label_flip_prob,
            rng_seed: self.seed,
        }
    }

    pub fn alif_config(&self) -> AlifConfig {
        AlifConfig {
            n_v: self.n_v,
            n_alif: self.n_alif,
        }
    }
}
