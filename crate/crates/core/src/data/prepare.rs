use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{DataError, Manifest, Vocab, XVectorStore};
use crate::features::{cmvn, read_feature_file, read_wav, write_feature_file, FeatureConfig, FeatureError, FeatureExtractor, FeatureKind};
use crate::model::Example;

/// Feature extraction settings recorded alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub config: FeatureConfig,
    pub kind: FeatureKind,
    pub cmvn: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { config: FeatureConfig::default(), kind: FeatureKind::LogMel, cmvn: true }
    }
}

impl FeatureSpec {
    pub fn input_dim(&self) -> usize {
        match self.kind {
            FeatureKind::LogMel => self.config.n_mels,
            FeatureKind::Mfcc => self.config.n_mfcc,
        }
    }

    fn cache_tag(&self) -> String {
        format!("{}{}", self.config.fingerprint(self.kind), if self.cmvn { "-cmvn" } else { "" })
    }
}

/// How manifest audio becomes model input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrepareOptions {
    pub features: FeatureSpec,
    /// Feature files are reused from (and written to) this directory.
    pub cache_dir: Option<PathBuf>,
    pub xvectors: Option<XVectorStore>,
}

/// Loads audio, extracts features and encodes transcripts for every
/// utterance in manifest order.
pub fn prepare_examples(m: &Manifest, vocab: &Vocab, opts: &PrepareOptions) -> Result<Vec<Example>, DataError> {
    if let Some(dir) = &opts.cache_dir {
        std::fs::create_dir_all(dir)?;
    }
    let spec = &opts.features;
    let tag = spec.cache_tag();
    let mut extractors: HashMap<u32, FeatureExtractor> = HashMap::new();
    let mut out = Vec::with_capacity(m.len());
    for u in m.utterances() {
        let wrap = |source: FeatureError| DataError::Features { id: u.id.clone(), source };
        let cached = opts.cache_dir.as_ref().map(|d| d.join(format!("{}.{tag}.gafm", u.id)));
        let features = match &cached {
            Some(p) if p.exists() => read_feature_file(p).map_err(wrap)?,
            _ => {
                let w = read_wav(m.audio_path(u)).map_err(wrap)?;
                let ex = match extractors.entry(w.sample_rate) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(FeatureExtractor::new(spec.config.clone(), w.sample_rate).map_err(wrap)?)
                    }
                };
                let mut f = match spec.kind {
                    FeatureKind::LogMel => ex.log_mel(&w),
                    FeatureKind::Mfcc => ex.mfcc(&w),
                }
                .map_err(wrap)?;
                if spec.cmvn {
                    f = cmvn(&f).map_err(wrap)?;
                }
                if let Some(p) = &cached {
                    write_feature_file(p, &f.frames).map_err(wrap)?;
                }
                f.frames
            }
        };
        let target = vocab.encode(&u.text)?;
        let xvector = opts.xvectors.as_ref().map(|s| s.lookup(&u.speaker)).transpose()?;
        out.push(Example { id: u.id.clone(), features, target, xvector });
    }
    Ok(out)
}
