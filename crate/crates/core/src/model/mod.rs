//! Small encoder-decoder Transformer acoustic model with a CTC head, a
//! teacher-forced attention decoder and optional x-vector fusion.

mod layers;
mod params;

pub use layers::{
    ctc_log_probs, decode_train, encode, encode_on_tape, forward_loss, fuse_xvector, greedy_decode,
    loss_and_gradients, positional_encoding, Example, LossParts, SOS_EOS,
};
pub use params::{BoundParams, ModelParams};

use serde::{Deserialize, Serialize};

use crate::ctc::CtcError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("model contract violation: {0}")]
    Contract(String),
    #[error("utterance {utt}: {source}")]
    Infeasible { utt: String, source: CtcError },
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    None,
    Sum,
    Concat,
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "sum" => Ok(Self::Sum),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown fusion mode {other:?} (none|sum|concat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub xvector_dim: usize,
    pub fusion: FusionMode,
    pub lambda_ctc: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            input_dim: 80,
            d_model: 64,
            n_heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ff_dim: 128,
            vocab_size,
            xvector_dim: 512,
            fusion: FusionMode::None,
            lambda_ctc: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model {} must be even and positive", self.d_model));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if !(0.0..=1.0).contains(&self.lambda_ctc) {
            return bad(format!("lambda_ctc {} outside [0, 1]", self.lambda_ctc));
        }
        if self.input_dim == 0 || self.ff_dim == 0 || self.xvector_dim == 0 {
            return bad("input_dim, ff_dim and xvector_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XVectorSource {
    File,
    Stub,
}

/// Per-speaker voice embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct XVector {
    pub speaker: String,
    pub values: Vec<f64>,
    pub source: XVectorSource,
}

impl XVector {
    pub fn new(speaker: impl Into<String>, values: Vec<f64>, source: XVectorSource) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Contract("x-vector contains non-finite values".into()));
        }
        Ok(Self { speaker: speaker.into(), values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
