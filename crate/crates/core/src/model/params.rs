use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{FusionMode, ModelConfig, ModelError};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Ones,
    Zeros,
}

/// All trainable tensors, keyed by hierarchical name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

type Layout = Vec<(String, Vec<usize>, Init)>;

fn push_linear(out: &mut Layout, name: String, i: usize, o: usize) {
    out.push((format!("{name}.w"), vec![i, o], Init::Xavier));
    out.push((format!("{name}.b"), vec![o], Init::Zeros));
}

/// The key projection has no bias: softmax over keys cancels it.
fn attention(out: &mut Layout, name: String, d: usize) {
    push_linear(out, format!("{name}.q"), d, d);
    out.push((format!("{name}.k.w"), vec![d, d], Init::Xavier));
    push_linear(out, format!("{name}.v"), d, d);
    push_linear(out, format!("{name}.o"), d, d);
}

fn layout(cfg: &ModelConfig) -> Layout {
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let mut out = Vec::new();
    push_linear(&mut out, "enc.in".into(), cfg.input_dim, d);
    for l in 0..cfg.enc_layers {
        attention(&mut out, format!("enc.{l}.attn"), d);
        push_linear(&mut out, format!("enc.{l}.ff1"), d, cfg.ff_dim);
        push_linear(&mut out, format!("enc.{l}.ff2"), cfg.ff_dim, d);
    }
    match cfg.fusion {
        FusionMode::None => {}
        FusionMode::Sum => push_linear(&mut out, "fuse.x".into(), cfg.xvector_dim, d),
        FusionMode::Concat => {
            push_linear(&mut out, "fuse.x".into(), cfg.xvector_dim, d);
            push_linear(&mut out, "fuse.out".into(), 2 * d, d);
        }
    }
    push_linear(&mut out, "ctc".into(), d, v);
    for l in 0..cfg.dec_layers {
        attention(&mut out, format!("dec.{l}.self"), d);
        attention(&mut out, format!("dec.{l}.cross"), d);
        push_linear(&mut out, format!("dec.{l}.ff1"), d, cfg.ff_dim);
        push_linear(&mut out, format!("dec.{l}.ff2"), cfg.ff_dim, d);
    }
    push_linear(&mut out, "dec.out".into(), d, v);
    out.push(("dec.emb".into(), vec![v, d], Init::Xavier));
    let mut norm = |name: String| {
        out.push((format!("{name}.g"), vec![d], Init::Ones));
        out.push((format!("{name}.b"), vec![d], Init::Zeros));
    };
    for l in 0..cfg.enc_layers {
        norm(format!("enc.{l}.ln1"));
        norm(format!("enc.{l}.ln2"));
    }
    for l in 0..cfg.dec_layers {
        for n in ["ln1", "ln2", "ln3"] {
            norm(format!("dec.{l}.{n}"));
        }
    }
    out
}

/// Each tensor draws from its own generator keyed by (seed, name), so a
/// key shared between two configs initialises identically.
fn key_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (key, shape, init) in layout(cfg) {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::ones(&shape),
                Init::Xavier => {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let mut rng = key_rng(seed, &key);
                    let n = shape.iter().product();
                    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())?
                }
            };
            tensors.insert(key, t);
        }
        Ok(Self { tensors })
    }

    /// Parameter names and shapes implied by a config.
    pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
        layout(cfg).into_iter().map(|(k, s, _)| (k, s)).collect()
    }

    /// Builds from explicit tensors, checking the key set and shapes
    /// against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self, ModelError> {
        let expected = Self::expected_shapes(cfg);
        if expected.len() != tensors.len() || expected.keys().any(|k| !tensors.contains_key(k)) {
            let missing: Vec<_> = expected.keys().filter(|k| !tensors.contains_key(*k)).collect();
            let extra: Vec<_> = tensors.keys().filter(|k| !expected.contains_key(*k)).collect();
            return Err(ModelError::Contract(format!(
                "parameter keys do not match config (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        for (k, shape) in &expected {
            if tensors[k].shape() != shape.as_slice() {
                return Err(ModelError::Contract(format!(
                    "{k}: shape {:?}, config implies {shape:?}",
                    tensors[k].shape()
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.tensors.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(key)
    }

    pub fn set(&mut self, key: &str, t: Tensor) -> Result<(), ModelError> {
        match self.tensors.get_mut(key) {
            Some(slot) if slot.shape() == t.shape() => {
                *slot = t;
                Ok(())
            }
            Some(slot) => Err(ModelError::Contract(format!(
                "{key}: shape {:?} cannot replace {:?}",
                t.shape(),
                slot.shape()
            ))),
            None => Err(ModelError::Contract(format!("no parameter named {key}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|(k, t)| (k.clone(), tape.param(t.clone()))).collect(),
        }
    }
}

/// Parameters recorded on one tape.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, key: &str) -> Result<Var<'t>, ModelError> {
        self.vars
            .get(key)
            .copied()
            .ok_or_else(|| ModelError::Contract(format!("missing parameter {key}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::new(6);
        assert_eq!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(ModelParams::init(&cfg, 3).unwrap(), ModelParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn fusion_keys_extend_plain_model() {
        let plain = ModelConfig::new(6);
        let sum = ModelConfig { fusion: FusionMode::Sum, ..plain.clone() };
        let concat = ModelConfig { fusion: FusionMode::Concat, ..plain.clone() };
        let (p, s, c) = (
            ModelParams::init(&plain, 1).unwrap(),
            ModelParams::init(&sum, 1).unwrap(),
            ModelParams::init(&concat, 1).unwrap(),
        );
        assert!(p.len() < s.len() && s.len() < c.len());
        for (k, t) in p.iter() {
            assert_eq!(s.get(k), Some(t), "{k}");
            assert_eq!(c.get(k), Some(t), "{k}");
        }
        assert!(s.get("fuse.x.w").is_some() && p.get("fuse.x.w").is_none());
    }

    #[test]
    fn xavier_bounds_respected() {
        let cfg = ModelConfig::new(6);
        let p = ModelParams::init(&cfg, 0).unwrap();
        let w = p.get("enc.in.w").unwrap();
        let limit = (6.0f64 / (80.0 + 64.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(p.get("enc.0.ln1.g").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn from_tensors_checks_keys() {
        let cfg = ModelConfig::new(6);
        let p = ModelParams::init(&cfg, 0).unwrap();
        let mut map: BTreeMap<String, Tensor> = p.iter().map(|(k, t)| (k.to_string(), t.clone())).collect();
        assert!(ModelParams::from_tensors(&cfg, map.clone()).is_ok());
        map.remove("ctc.b");
        assert!(ModelParams::from_tensors(&cfg, map).is_err());
    }
}
