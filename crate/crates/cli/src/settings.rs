//! Per-command settings. Each command has a flag struct whose fields are
//! all optional and a settings struct with concrete defaults; values are
//! layered defaults < config file < flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use genadapt::data::{Gender, ToyCorpusSpec};
use genadapt::eval::{GroupDimension, Tokenization};
use genadapt::features::FeatureKind;
use genadapt::model::FusionMode;
use genadapt::optim::OptimizerKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "GENADAPT_SEED";

/// Merges `flags` over the JSON object in `config` over `S::default()`.
pub fn resolve<S, F>(flags: &F, config: Option<&Path>) -> CliResult<S>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let mut merged = match serde_json::to_value(S::default()).expect("settings serialise") {
        Value::Object(m) => m,
        _ => unreachable!("settings are structs"),
    };
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => merged.extend(m),
            Ok(_) => return Err(CliError::usage(format!("config {} must hold a JSON object", path.display()))),
            Err(e) => return Err(CliError::usage(format!("config {}: {e}", path.display()))),
        }
    }
    if let Value::Object(m) = serde_json::to_value(flags).expect("flags serialise") {
        merged.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("invalid settings: {e}")))
}

/// Explicit seed, else `GENADAPT_SEED`, else 0.
pub fn resolve_seed(seed: Option<u64>) -> CliResult<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::usage(format!("missing required setting --{flag}")))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthFlags {
    /// JSON file with default values for any of these settings.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub speakers_per_gender: Option<usize>,
    #[arg(long)]
    pub utterances_per_speaker: Option<usize>,
    /// Characters to draw transcripts from (lowercase letters and space).
    #[arg(long)]
    pub alphabet: Option<String>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub noise_level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub speakers_per_gender: usize,
    pub utterances_per_speaker: usize,
    pub alphabet: String,
    pub min_len: usize,
    pub max_len: usize,
    pub sample_rate: u32,
    pub noise_level: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let t = ToyCorpusSpec::default();
        Self {
            out_dir: None,
            seed: None,
            speakers_per_gender: t.speakers_per_gender,
            utterances_per_speaker: t.utterances_per_speaker,
            alphabet: t.alphabet,
            min_len: t.min_len,
            max_len: t.max_len,
            sample_rate: t.sample_rate,
            noise_level: t.noise_level,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeaturesFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_name = "logmel|mfcc")]
    pub features: Option<FeatureKind>,
    #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
    pub cmvn: Option<bool>,
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSettings {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub features: FeatureKind,
    pub cmvn: bool,
    pub n_mels: usize,
}

impl Default for FeaturesSettings {
    fn default() -> Self {
        Self { manifest: None, out_dir: None, features: FeatureKind::LogMel, cmvn: true, n_mels: 80 }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the train/dev split; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Train on one gender only.
    #[arg(long, value_name = "M|F")]
    pub gender: Option<Gender>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long, value_name = "noam_adam|adadelta|adam")]
    pub optimizer: Option<OptimizerKind>,
    /// Constant rate for adadelta and adam.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub noam_factor: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub lambda_ctc: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Parameter-name prefix to freeze; repeatable.
    #[arg(long)]
    pub freeze: Option<Vec<String>>,
    #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
    pub strict: Option<bool>,
    #[arg(long, value_name = "none|sum|concat")]
    pub xvector_fusion: Option<FusionMode>,
    /// `stub` or a directory of `<speaker>.xv` files.
    #[arg(long)]
    pub xvector_store: Option<String>,
    #[arg(long)]
    pub xvector_dim: Option<usize>,
    #[arg(long, value_name = "logmel|mfcc")]
    pub features: Option<FeatureKind>,
    #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
    pub cmvn: Option<bool>,
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub split_ratio: f64,
    pub gender: Option<Gender>,
    pub epochs: u32,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub noam_factor: f64,
    pub warmup_steps: u64,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_dim: usize,
    pub lambda_ctc: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub freeze: Vec<String>,
    pub strict: bool,
    pub xvector_fusion: FusionMode,
    pub xvector_store: Option<String>,
    pub xvector_dim: usize,
    pub features: FeatureKind,
    pub cmvn: bool,
    pub n_mels: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: None,
            seed: None,
            split_seed: None,
            split_ratio: 0.9,
            gender: None,
            epochs: 100,
            optimizer: OptimizerKind::NoamAdam,
            lr: 1e-3,
            noam_factor: 5.0,
            warmup_steps: 25_000,
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ff_dim: 128,
            lambda_ctc: 0.3,
            batch_size: 8,
            clip_norm: 5.0,
            freeze: Vec::new(),
            strict: false,
            xvector_fusion: FusionMode::None,
            xvector_store: None,
            xvector_dim: 512,
            features: FeatureKind::LogMel,
            cmvn: true,
            n_mels: 80,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FinetuneFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Base checkpoint file.
    #[arg(long, conflicts_with = "base_run")]
    pub base: Option<PathBuf>,
    /// Output directory of a training run; see --from-epoch.
    #[arg(long)]
    pub base_run: Option<PathBuf>,
    /// Epoch of --base-run to start from; defaults to its last checkpoint.
    #[arg(long)]
    pub from_epoch: Option<u32>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long, value_name = "M|F")]
    pub gender: Option<Gender>,
    #[arg(long, value_name = "noam_adam|adadelta|adam")]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub noam_factor: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub freeze: Option<Vec<String>>,
    #[arg(long)]
    pub xvector_store: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSettings {
    pub base: Option<PathBuf>,
    pub base_run: Option<PathBuf>,
    pub from_epoch: Option<u32>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub split_ratio: f64,
    pub gender: Option<Gender>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub noam_factor: f64,
    pub warmup_steps: u64,
    pub epochs: u32,
    pub freeze: Vec<String>,
    pub xvector_store: Option<String>,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let r = genadapt::optim::FinetuneRecipe::default();
        Self {
            base: None,
            base_run: None,
            from_epoch: None,
            manifest: None,
            out_dir: None,
            seed: None,
            split_seed: None,
            split_ratio: 0.9,
            gender: None,
            optimizer: r.optimizer,
            lr: r.lr,
            noam_factor: r.factor,
            warmup_steps: r.warmup_steps,
            epochs: r.epochs,
            freeze: r.freeze,
            xvector_store: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Dev,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint to decode with; repeatable, one table row each.
    #[arg(long = "checkpoint")]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// JSON-lines hypotheses `{"id", "hyp"}`; repeatable.
    #[arg(long = "hyps")]
    pub hyps: Option<Vec<PathBuf>>,
    /// Row names, in order: checkpoints first, then hypothesis files.
    #[arg(long = "name")]
    pub names: Option<Vec<String>>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<SplitPart>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "M|F")]
    pub gender: Option<Gender>,
    #[arg(long, value_name = "gender|speaker|accent")]
    pub group: Option<GroupDimension>,
    #[arg(long, value_name = "word|char")]
    pub tokenization: Option<Tokenization>,
    #[arg(long)]
    pub xvector_store: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub checkpoints: Vec<PathBuf>,
    pub hyps: Vec<PathBuf>,
    pub names: Vec<String>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: SplitPart,
    pub split_ratio: f64,
    pub split_seed: Option<u64>,
    pub seed: Option<u64>,
    pub gender: Option<Gender>,
    pub group: GroupDimension,
    pub tokenization: Tokenization,
    pub xvector_store: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            hyps: Vec::new(),
            names: Vec::new(),
            manifest: None,
            out_dir: None,
            split: SplitPart::Dev,
            split_ratio: 0.9,
            split_seed: None,
            seed: None,
            gender: None,
            group: GroupDimension::Gender,
            tokenization: Tokenization::Word,
            xvector_store: None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// ctc-oracle, grad-check, wer-oracle, schedule, checkpoint-roundtrip or all.
    pub suite: String,
    /// Also write the JSON results to <out-dir>/reports/verify.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
