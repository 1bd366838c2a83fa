use std::collections::BTreeMap;

use super::{BoundParams, FusionMode, ModelConfig, ModelError, ModelParams, XVector};
use crate::ctc::{self, CtcError, LabelSequence};
use crate::numerics::{Tape, Tensor, Var};

/// Start-of-sequence and end-of-sequence share one id.
pub const SOS_EOS: usize = 1;

const LN_EPS: f64 = 1e-5;
const MASK_VALUE: f64 = -1e9;

/// One training/evaluation utterance in model terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// `T × input_dim` features.
    pub features: Tensor,
    pub target: LabelSequence,
    pub xvector: Option<XVector>,
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub ctc: f64,
    pub att: f64,
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(...)`.
pub fn positional_encoding(t: usize, d_model: usize) -> Result<Tensor, ModelError> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(ModelError::Config(format!("positional encoding needs even d_model, got {d_model}")));
    }
    if t == 0 {
        return Err(ModelError::Contract("positional encoding for zero positions".into()));
    }
    let mut data = vec![0.0; t * d_model];
    for pos in 0..t {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![t, d_model], data)?)
}

fn linear<'t>(b: &BoundParams<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>, ModelError> {
    Ok(x.matmul(b.get(&format!("{name}.w"))?)?.add_row(b.get(&format!("{name}.b"))?)?)
}

fn norm<'t>(b: &BoundParams<'t>, name: &str, x: Var<'t>) -> Result<Var<'t>, ModelError> {
    Ok(x.layer_norm(b.get(&format!("{name}.g"))?, b.get(&format!("{name}.b"))?, LN_EPS)?)
}

fn feed_forward<'t>(b: &BoundParams<'t>, prefix: &str, x: Var<'t>) -> Result<Var<'t>, ModelError> {
    let h = linear(b, &format!("{prefix}.ff1"), x)?.relu()?;
    linear(b, &format!("{prefix}.ff2"), h)
}

/// Multi-head scaled dot-product attention of `q_in` over `kv_in`.
fn attention<'t>(
    b: &BoundParams<'t>,
    prefix: &str,
    q_in: Var<'t>,
    kv_in: Var<'t>,
    heads: usize,
    causal: bool,
) -> Result<Var<'t>, ModelError> {
    let q = linear(b, &format!("{prefix}.q"), q_in)?;
    let k = kv_in.matmul(b.get(&format!("{prefix}.k.w"))?)?;
    let v = linear(b, &format!("{prefix}.v"), kv_in)?;
    let d = q.shape()[1];
    let (tq, tk) = (q.shape()[0], k.shape()[0]);
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mask: Option<Vec<bool>> = causal.then(|| (0..tq * tk).map(|i| i % tk > i / tk).collect());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (q.slice(1, h * dk, dk)?, k.slice(1, h * dk, dk)?, v.slice(1, h * dk, dk)?)
        };
        let mut scores = qh.matmul(kh.transpose()?)?.scale(scale)?;
        if let Some(m) = &mask {
            scores = scores.masked_fill(m, MASK_VALUE)?;
        }
        outs.push(scores.softmax(1)?.matmul(vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { Var::concat(&outs, 1)? };
    linear(b, &format!("{prefix}.o"), merged)
}

/// Injects a speaker embedding into every encoder frame.
///
/// `Sum` adds a learned `xvector_dim → d_model` projection to each frame;
/// `Concat` appends that projection per frame and maps the `2·d_model`
/// result back to `d_model`.
pub fn fuse_xvector<'t>(
    tape: &'t Tape,
    b: &BoundParams<'t>,
    enc: Var<'t>,
    xvec: &XVector,
    mode: FusionMode,
) -> Result<Var<'t>, ModelError> {
    let x = tape.constant(Tensor::new(vec![1, xvec.dim()], xvec.values.clone())?);
    let proj = linear(b, "fuse.x", x)?;
    match mode {
        FusionMode::None => Err(ModelError::Contract("fuse_xvector called with fusion mode none".into())),
        FusionMode::Sum => Ok(enc.add_row(proj)?),
        FusionMode::Concat => {
            let t = enc.shape()[0];
            let repeated = tape.constant(Tensor::ones(&[t, 1])).matmul(proj)?;
            let joined = Var::concat(&[enc, repeated], 1)?;
            linear(b, "fuse.out", joined)
        }
    }
}

pub fn encode_on_tape<'t>(
    tape: &'t Tape,
    b: &BoundParams<'t>,
    cfg: &ModelConfig,
    features: &Tensor,
    xvec: Option<&XVector>,
) -> Result<Var<'t>, ModelError> {
    let [t, dim] = features.shape() else {
        return Err(ModelError::Config(format!("features must be T×D, got {:?}", features.shape())));
    };
    if *dim != cfg.input_dim {
        return Err(ModelError::Config(format!("feature dim {dim} != model input dim {}", cfg.input_dim)));
    }
    match (cfg.fusion, xvec) {
        (FusionMode::None, Some(_)) => {
            return Err(ModelError::Contract("x-vector supplied but fusion mode is none".into()))
        }
        (FusionMode::Sum | FusionMode::Concat, None) => {
            return Err(ModelError::Contract("fusion model needs an x-vector".into()))
        }
        (_, Some(x)) if x.dim() != cfg.xvector_dim => {
            return Err(ModelError::Config(format!("x-vector dim {} != {}", x.dim(), cfg.xvector_dim)))
        }
        _ => {}
    }
    let input = tape.constant(features.clone());
    let pe = tape.constant(positional_encoding(*t, cfg.d_model)?);
    let mut x = linear(b, "enc.in", input)?.add(pe)?;
    for l in 0..cfg.enc_layers {
        let p = format!("enc.{l}");
        let a = attention(b, &format!("{p}.attn"), x, x, cfg.n_heads, false)?;
        x = norm(b, &format!("{p}.ln1"), x.add(a)?)?;
        let f = feed_forward(b, &p, x)?;
        x = norm(b, &format!("{p}.ln2"), x.add(f)?)?;
    }
    match xvec {
        Some(xv) => fuse_xvector(tape, b, x, xv, cfg.fusion),
        None => Ok(x),
    }
}

/// Encoder output `T × d_model` as a plain tensor.
pub fn encode(features: &Tensor, xvec: Option<&XVector>, cfg: &ModelConfig, params: &ModelParams) -> Result<Tensor, ModelError> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let out = encode_on_tape(&tape, &b, cfg, features, xvec)?;
    Ok((*out.value()).clone())
}

/// Per-frame CTC log-probabilities, `T × vocab_size`.
pub fn ctc_log_probs(features: &Tensor, xvec: Option<&XVector>, cfg: &ModelConfig, params: &ModelParams) -> Result<Tensor, ModelError> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let enc = encode_on_tape(&tape, &b, cfg, features, xvec)?;
    let lp = linear(&b, "ctc", enc)?.log_softmax()?;
    Ok((*lp.value()).clone())
}

/// Greedy CTC transcription: per-frame argmax, repeats collapsed, blanks
/// removed.
pub fn greedy_decode(features: &Tensor, xvec: Option<&XVector>, cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<usize>, ModelError> {
    Ok(ctc::greedy_decode_scores(&ctc_log_probs(features, xvec, cfg, params)?))
}

/// Teacher-forced decoder: input `[sos, y1..yL]`, logits `(L+1) × V`
/// predicting `[y1..yL, eos]`.
pub fn decode_train<'t>(
    tape: &'t Tape,
    b: &BoundParams<'t>,
    cfg: &ModelConfig,
    enc: Var<'t>,
    target: &LabelSequence,
) -> Result<Var<'t>, ModelError> {
    if enc.value().numel() == 0 {
        return Err(ModelError::Contract("empty encoder output".into()));
    }
    if let Some(&bad) = target.ids().iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(ModelError::Contract(format!("token {bad} outside vocabulary")));
    }
    let mut ids = Vec::with_capacity(target.len() + 1);
    ids.push(SOS_EOS);
    ids.extend_from_slice(target.ids());
    let pe = tape.constant(positional_encoding(ids.len(), cfg.d_model)?);
    let mut x = b.get("dec.emb")?.embedding(&ids)?.add(pe)?;
    for l in 0..cfg.dec_layers {
        let p = format!("dec.{l}");
        let s = attention(b, &format!("{p}.self"), x, x, cfg.n_heads, true)?;
        x = norm(b, &format!("{p}.ln1"), x.add(s)?)?;
        let c = attention(b, &format!("{p}.cross"), x, enc, cfg.n_heads, false)?;
        x = norm(b, &format!("{p}.ln2"), x.add(c)?)?;
        let f = feed_forward(b, &p, x)?;
        x = norm(b, &format!("{p}.ln3"), x.add(f)?)?;
    }
    linear(b, "dec.out", x)
}

/// Records the joint loss of a batch on `tape`:
/// mean over utterances of `λ·CTC + (1-λ)·CE`, where CE is the mean
/// per-token cross-entropy of the teacher-forced decoder.
pub(crate) fn batch_loss_on_tape<'t>(
    tape: &'t Tape,
    b: &BoundParams<'t>,
    cfg: &ModelConfig,
    batch: &[Example],
) -> Result<(Var<'t>, LossParts), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Contract("empty batch".into()));
    }
    let lambda = cfg.lambda_ctc;
    let mut parts = LossParts::default();
    let mut total: Option<Var<'t>> = None;
    for ex in batch {
        let enc = encode_on_tape(tape, b, cfg, &ex.features, ex.xvector.as_ref())?;
        let log_probs = linear(b, "ctc", enc)?.log_softmax()?;
        let (t, v) = (log_probs.shape()[0], log_probs.shape()[1]);
        let (ctc_value, ctc_grad) = ctc::forward_backward(log_probs.value().data(), t, v, ex.target.ids())
            .map_err(|e| match e {
                e @ CtcError::Infeasible { .. } => ModelError::Infeasible { utt: ex.id.clone(), source: e },
                other => ModelError::Ctc(other),
            })?;
        let ctc_loss = log_probs.scalar_fn(ctc_value, Tensor::new(vec![t, v], ctc_grad)?)?;

        let logits = decode_train(tape, b, cfg, enc, &ex.target)?;
        let mut next: Vec<usize> = ex.target.ids().to_vec();
        next.push(SOS_EOS);
        let att_loss = logits
            .log_softmax()?
            .pick(&next)?
            .sum()?
            .scale(-1.0 / next.len() as f64)?;

        parts.ctc += ctc_value;
        parts.att += att_loss.item()?;
        let utt = ctc_loss.scale(lambda)?.add(att_loss.scale(1.0 - lambda)?)?;
        total = Some(match total {
            None => utt,
            Some(acc) => acc.add(utt)?,
        });
    }
    let n = batch.len() as f64;
    let loss = total.expect("non-empty batch").scale(1.0 / n)?;
    parts.ctc /= n;
    parts.att /= n;
    parts.total = loss.item()?;
    Ok((loss, parts))
}

pub fn forward_loss(batch: &[Example], cfg: &ModelConfig, params: &ModelParams) -> Result<LossParts, ModelError> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    Ok(batch_loss_on_tape(&tape, &b, cfg, batch)?.1)
}

/// Joint loss and its gradient for every parameter.
pub fn loss_and_gradients(
    batch: &[Example],
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(LossParts, BTreeMap<String, Tensor>), ModelError> {
    let tape = Tape::new();
    let b = params.bind(&tape);
    let (loss, parts) = batch_loss_on_tape(&tape, &b, cfg, batch)?;
    let grads = tape.backward(loss)?;
    let out = b
        .iter()
        .map(|(k, var)| (k.to_string(), grads.get(var).expect("every param is a leaf").clone()))
        .collect();
    Ok((parts, out))
}
