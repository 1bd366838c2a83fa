//! Waveform input, 80-bin log-mel filterbanks, MFCCs and per-utterance
//! CMVN.

mod fbank;
mod store;
mod wav;

pub use fbank::{dct_ii, hz_to_mel, mel_center_frequencies, mel_filterbank, mel_to_hz, FeatureExtractor};
pub use store::{read_feature_file, write_feature_file, FEATURE_MAGIC};
pub use wav::{read_wav, write_wav_pcm16};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{NumericsError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("wav format error ({field}): {detail}")]
    Format { field: &'static str, detail: String },
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("feature file error: {0}")]
    File(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if samples.is_empty() {
            return Err(FeatureError::TooShort("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(FeatureError::Config("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            n_mfcc: 13,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: 512,
            fmin: 20.0,
            fmax: 8000.0,
            preemphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn frame_length(&self, sample_rate: u32) -> usize {
        (self.frame_length_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift(&self, sample_rate: u32) -> usize {
        (self.frame_shift_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::Config(m));
        if self.n_mels < 1 {
            return bad("n_mels must be at least 1".into());
        }
        if self.n_mfcc < 1 || self.n_mfcc > self.n_mels {
            return bad(format!("n_mfcc {} must be in [1, n_mels]", self.n_mfcc));
        }
        let (len, shift) = (self.frame_length(sample_rate), self.frame_shift(sample_rate));
        if shift == 0 || shift > len {
            return bad(format!("frame shift {shift} must be in [1, frame length {len}]"));
        }
        if len > self.fft_size {
            return bad(format!("frame length {len} exceeds fft size {}", self.fft_size));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {}, got {}..{}",
                sample_rate as f64 / 2.0,
                self.fmin,
                self.fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// `floor((len - frame_length) / frame_shift) + 1`, or `None` when the
    /// signal is shorter than one frame.
    pub fn num_frames(&self, num_samples: usize, sample_rate: u32) -> Option<usize> {
        let len = self.frame_length(sample_rate);
        let shift = self.frame_shift(sample_rate);
        (num_samples >= len).then(|| (num_samples - len) / shift + 1)
    }

    pub fn fingerprint(&self, kind: FeatureKind) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(format!("{kind:?}|{json}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[default]
    LogMel,
    Mfcc,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logmel" => Ok(Self::LogMel),
            "mfcc" => Ok(Self::Mfcc),
            other => Err(format!("unknown feature kind {other:?} (logmel|mfcc)")),
        }
    }
}

/// `T × D` feature frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Tensor,
    pub fingerprint: String,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

pub fn log_mel_fbank(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    FeatureExtractor::new(cfg.clone(), w.sample_rate)?.log_mel(w)
}

pub fn mfcc(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    FeatureExtractor::new(cfg.clone(), w.sample_rate)?.mfcc(w)
}

/// Per-utterance mean and variance normalisation of every feature column.
/// Columns with variance below `1e-8` are only mean-centred, which leaves a
/// constant column at zero.
pub fn cmvn(f: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    const VAR_FLOOR: f64 = 1e-8;
    let (t, d) = (f.num_frames(), f.dim());
    if t < 2 {
        return Err(FeatureError::TooShort(format!("cmvn needs at least 2 frames, got {t}")));
    }
    let x = f.frames.data();
    let mut out = x.to_vec();
    for j in 0..d {
        let mean = (0..t).map(|i| x[i * d + j]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = if var < VAR_FLOOR { 1.0 } else { 1.0 / var.sqrt() };
        for i in 0..t {
            out[i * d + j] = (x[i * d + j] - mean) * scale;
        }
    }
    Ok(FeatureMatrix {
        frames: Tensor::new(vec![t, d], out)?,
        fingerprint: format!("{}+cmvn", f.fingerprint),
    })
}
