//! Checkpoint file: magic `GACK`, u32 format version, then six sections in
//! fixed order, each prefixed by its u64 byte length:
//! config JSON, parameters, optimizer state, RNG state, manifest
//! fingerprint, epoch. All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OptimError, OptimState, OptimizerConfig, TrainOptions};
use crate::data::{FeatureSpec, Vocab};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GACK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (magic {0:?})")]
    Magic([u8; 4]),
    #[error("checkpoint format version {found}, this build reads {supported}")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint truncated in {0} section")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to rebuild the model and its input pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub features: FeatureSpec,
    pub train: TrainOptions,
}

/// Serialisable position of a `ChaCha8Rng`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub config: CheckpointConfig,
    pub params: ModelParams,
    pub optim: OptimState,
    pub rng: RngState,
    pub manifest_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimHeader {
    config: OptimizerConfig,
    step: u64,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        buf.write_f64::<LittleEndian>(x).expect("vec write");
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| CheckpointError::Truncated(self.section))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| CheckpointError::Truncated(self.section))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let start = self.cur.position() as usize;
        let all = *self.cur.get_ref();
        if all.len() - start < n {
            return Err(CheckpointError::Truncated(self.section));
        }
        self.cur.set_position((start + n) as u64);
        Ok(&all[start..start + n])
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(format!("{}: {e}", self.section)))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.bytes(n.checked_mul(8).ok_or(CheckpointError::Truncated(self.section))?)?;
        let mut out = vec![0.0; n];
        Cursor::new(raw).read_f64_into::<LittleEndian>(&mut out).expect("length checked");
        Ok(out)
    }

    fn section(&mut self, name: &'static str) -> Result<Reader<'a>, CheckpointError> {
        self.section = name;
        let n = usize::try_from(self.u64()?).map_err(|_| CheckpointError::Truncated(name))?;
        Ok(Reader { cur: Cursor::new(self.bytes(n)?), section: name })
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        let rest = self.cur.get_ref().len() as u64 - self.cur.position();
        if rest != 0 {
            return Err(CheckpointError::Corrupt(format!("{rest} unexpected bytes after {} section", self.section)));
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<Vec<u8>> = Vec::with_capacity(6);
        sections.push(serde_json::to_vec(&self.config).expect("config serialises"));

        let mut p = Vec::new();
        p.write_u32::<LittleEndian>(self.params.len() as u32).expect("vec write");
        for (k, t) in self.params.iter() {
            put_str(&mut p, k);
            p.write_u32::<LittleEndian>(t.ndim() as u32).expect("vec write");
            for &d in t.shape() {
                p.write_u64::<LittleEndian>(d as u64).expect("vec write");
            }
            put_f64s(&mut p, t.data());
        }
        sections.push(p);

        let mut o = Vec::new();
        let header = OptimHeader { config: self.optim.config.clone(), step: self.optim.step };
        put_str(&mut o, &serde_json::to_string(&header).expect("optimizer header serialises"));
        o.write_u32::<LittleEndian>(self.optim.slots.len() as u32).expect("vec write");
        for (k, [a, b]) in &self.optim.slots {
            put_str(&mut o, k);
            o.write_u64::<LittleEndian>(a.len() as u64).expect("vec write");
            put_f64s(&mut o, a);
            put_f64s(&mut o, b);
        }
        sections.push(o);

        let mut r = self.rng.seed.to_vec();
        r.write_u64::<LittleEndian>(self.rng.stream).expect("vec write");
        r.write_u128::<LittleEndian>(self.rng.word_pos).expect("vec write");
        sections.push(r);

        sections.push(self.manifest_fingerprint.as_bytes().to_vec());
        sections.push(self.epoch.to_le_bytes().to_vec());

        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).expect("vec write");
        for s in sections {
            out.write_u64::<LittleEndian>(s.len() as u64).expect("vec write");
            out.extend_from_slice(&s);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { cur: Cursor::new(bytes), section: "header" };
        let mut magic = [0u8; 4];
        r.cur.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated("header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Magic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version, supported: CHECKPOINT_VERSION });
        }
        let corrupt = |what: &str, e: &dyn std::fmt::Display| CheckpointError::Corrupt(format!("{what}: {e}"));

        let s = r.section("config")?;
        let config: CheckpointConfig =
            serde_json::from_slice(s.cur.get_ref()).map_err(|e| corrupt("config", &e))?;

        let mut s = r.section("parameters")?;
        let n = s.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name = s.str()?;
            let ndim = s.u32()? as usize;
            let shape = (0..ndim).map(|_| s.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt(&name, &"shape overflow"))?;
            let data = s.f64s(numel)?;
            let t = Tensor::new(shape, data).map_err(|e| corrupt(&name, &e))?;
            tensors.insert(name, t);
        }
        s.finish()?;
        let params = ModelParams::from_tensors(&config.model, tensors).map_err(|e| corrupt("parameters", &e))?;

        let mut s = r.section("optimizer")?;
        let header: OptimHeader = serde_json::from_str(&s.str()?).map_err(|e| corrupt("optimizer", &e))?;
        let n = s.u32()?;
        let mut slots = BTreeMap::new();
        for _ in 0..n {
            let name = s.str()?;
            let len = usize::try_from(s.u64()?).map_err(|_| CheckpointError::Truncated("optimizer"))?;
            let a = s.f64s(len)?;
            let b = s.f64s(len)?;
            slots.insert(name, [a, b]);
        }
        s.finish()?;
        let optim = OptimState { config: header.config, step: header.step, slots };
        optim.config.validate().map_err(|e| corrupt("optimizer", &e))?;
        if !optim.slots.keys().map(String::as_str).eq(params.keys())
            || params.iter().any(|(k, t)| optim.slots[k][0].len() != t.numel())
        {
            return Err(CheckpointError::Corrupt("optimizer accumulators do not match parameters".into()));
        }

        let mut s = r.section("rng")?;
        let seed: [u8; 32] = s.bytes(32)?.try_into().expect("32 bytes");
        let stream = s.u64()?;
        let word_pos = s.cur.read_u128::<LittleEndian>().map_err(|_| CheckpointError::Truncated("rng"))?;
        s.finish()?;

        let s = r.section("fingerprint")?;
        let manifest_fingerprint =
            String::from_utf8(s.cur.get_ref().to_vec()).map_err(|e| corrupt("fingerprint", &e))?;

        let mut s = r.section("epoch")?;
        let epoch = s.u32()?;
        s.finish()?;
        r.finish()?;
        if epoch == 0 {
            return Err(CheckpointError::Corrupt("epoch must be >= 1".into()));
        }
        if config.vocab.len() != config.model.vocab_size {
            return Err(CheckpointError::Corrupt("vocabulary size disagrees with model config".into()));
        }
        Ok(Self { epoch, config, params, optim, rng: RngState { seed, stream, word_pos }, manifest_fingerprint })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails unless this checkpoint can consume data prepared with `vocab`
    /// and `features`.
    pub fn ensure_compatible(&self, vocab: &Vocab, features: &FeatureSpec) -> Result<(), OptimError> {
        if &self.config.vocab != vocab {
            return Err(OptimError::Incompatible(format!(
                "checkpoint vocabulary has {} symbols {:?}, data needs {} symbols {:?}",
                self.config.vocab.len(),
                self.config.vocab.symbols(),
                vocab.len(),
                vocab.symbols()
            )));
        }
        if &self.config.features != features {
            return Err(OptimError::Incompatible("checkpoint was trained on different features".into()));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}
