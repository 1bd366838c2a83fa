//! Oracle suites that can be run outside the test harness, e.g. from the
//! command line on a deployed build.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ctc::{ctc_brute_force, ctc_loss, LabelSequence, LogProbLattice};
use crate::data::{FeatureSpec, Vocab, XVectorStore};
use crate::eval::{edit_distance, wer};
use crate::features::FeatureConfig;
use crate::model::{loss_and_gradients, Example, FusionMode, ModelConfig, ModelError, ModelParams};
use crate::numerics::{grad_check, Tensor};
use crate::optim::{
    adadelta_step, noam_lr, Checkpoint, CheckpointConfig, OptimState, OptimizerConfig, ScheduleConfig, TrainOptions,
    Trainer, ADADELTA_EPS, ADADELTA_RHO,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    CtcOracle,
    GradCheck,
    WerOracle,
    Schedule,
    CheckpointRoundtrip,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::CtcOracle, Suite::GradCheck, Suite::WerOracle, Suite::Schedule, Suite::CheckpointRoundtrip];

    pub fn name(self) -> &'static str {
        match self {
            Suite::CtcOracle => "ctc-oracle",
            Suite::GradCheck => "grad-check",
            Suite::WerOracle => "wer-oracle",
            Suite::Schedule => "schedule",
            Suite::CheckpointRoundtrip => "checkpoint-roundtrip",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite {0:?}")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| UnknownSuite(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn within(name: impl Into<String>, err: f64, tol: f64) -> Self {
        Self::new(name, err <= tol, format!("max error {err:.3e} (tolerance {tol:.0e})"))
    }

    fn failed(name: impl Into<String>, e: impl fmt::Display) -> Self {
        Self::new(name, false, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn run(suite: Suite) -> SuiteReport {
    let checks = match suite {
        Suite::CtcOracle => ctc_oracle(100, 0),
        Suite::GradCheck => model_grad_checks(),
        Suite::WerOracle => wer_oracle(),
        Suite::Schedule => schedule_checks(),
        Suite::CheckpointRoundtrip => checkpoint_checks(),
    };
    SuiteReport { suite: suite.name().into(), passed: checks.iter().all(|c| c.passed), checks }
}

/// Random lattices with `T ≤ 6`, `V ≤ 4`, `|target| ≤ 3`, compared against
/// path enumeration. The returned check carries the worst absolute gap.
pub fn ctc_oracle(cases: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failure = None;
    for case in 0..cases {
        let v = rng.gen_range(2..=4);
        let t = rng.gen_range(1..=6);
        let target = loop {
            let len = rng.gen_range(0..=3);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..v)).collect();
            let label = LabelSequence::new(ids, v).expect("ids drawn below vocab");
            if label.min_frames() <= t {
                break label;
            }
        };
        let logits: Vec<f64> = (0..t * v).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let res = Tensor::new(vec![t, v], logits)
            .map_err(|e| e.to_string())
            .and_then(|l| LogProbLattice::from_logits(&l).map_err(|e| e.to_string()))
            .and_then(|lat| {
                let fast = ctc_loss(&lat, &target).map_err(|e| e.to_string())?.loss;
                let slow = ctc_brute_force(&lat, &target).map_err(|e| e.to_string())?;
                Ok((fast - slow).abs())
            });
        match res {
            Ok(gap) => worst = worst.max(gap),
            Err(e) => {
                failure = Some(format!("case {case}: {e}"));
                break;
            }
        }
    }
    let name = format!("ctc_loss vs path enumeration, {cases} cases");
    vec![match failure {
        Some(e) => Check::failed(name, e),
        None => Check::within(name, worst, 1e-9),
    }]
}

/// Joint-loss gradient check on a 16-wide, one-layer-each model with
/// two-frame inputs and a four-symbol vocabulary.
pub fn model_grad_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let runs = [
        (FusionMode::Sum, 0.0),
        (FusionMode::Sum, 0.3),
        (FusionMode::Sum, 1.0),
        (FusionMode::None, 0.3),
        (FusionMode::Concat, 0.3),
    ];
    for (fusion, lambda) in runs {
        let name = format!("grad check, fusion {fusion:?}, lambda {lambda}");
        out.push(match grad_check_model(fusion, lambda) {
            Ok((err, n)) => {
                let mut c = Check::within(name, err, 1e-4);
                c.detail = format!("{} over {n} parameters", c.detail);
                c
            }
            Err(e) => Check::failed(name, e),
        });
    }
    out
}

pub fn grad_check_config(fusion: FusionMode, lambda_ctc: f64) -> ModelConfig {
    ModelConfig {
        input_dim: 4,
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ff_dim: 16,
        vocab_size: 4,
        xvector_dim: 32,
        fusion,
        lambda_ctc,
    }
}

/// Returns the worst relative error and the number of scalars checked.
pub fn grad_check_model(fusion: FusionMode, lambda_ctc: f64) -> Result<(f64, usize), ModelError> {
    let cfg = grad_check_config(fusion, lambda_ctc);
    let params = ModelParams::init(&cfg, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = XVectorStore::Stub { dim: cfg.xvector_dim };
    let mut batch = Vec::new();
    for (spk, target) in [("spk-a", vec![3]), ("spk-b", vec![2, 3])] {
        let feats: Vec<f64> = (0..2 * cfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        batch.push(Example {
            id: spk.into(),
            features: Tensor::new(vec![2, cfg.input_dim], feats)?,
            target: LabelSequence::new(target, cfg.vocab_size).map_err(|e| ModelError::Contract(e.to_string()))?,
            xvector: match fusion {
                FusionMode::None => None,
                _ => Some(store.lookup(spk).map_err(|e| ModelError::Contract(e.to_string()))?),
            },
        });
    }
    let keys: Vec<String> = params.keys().map(String::from).collect();
    let values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let f = |vals: &[Tensor]| -> Result<(f64, Vec<Tensor>), ModelError> {
        let p = ModelParams::from_tensors(&cfg, keys.iter().cloned().zip(vals.iter().cloned()).collect())?;
        let (parts, mut grads) = loss_and_gradients(&batch, &cfg, &p)?;
        Ok((parts.total, keys.iter().map(|k| grads.remove(k).expect("every parameter has a gradient")).collect()))
    };
    let report = grad_check(f, &values, 1e-4, 1e-4)?;
    Ok((report.max_rel_error, report.checked))
}

/// Plain recursive edit distance, exponential but obviously correct.
fn exhaustive_distance(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => (exhaustive_distance(ar, br) + usize::from(x != y))
            .min(exhaustive_distance(ar, b) + 1)
            .min(exhaustive_distance(a, br) + 1),
    }
}

fn all_sequences(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                alphabet.iter().map(move |&c| {
                    let mut n = s.clone();
                    n.push(c);
                    n
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

pub fn wer_oracle() -> Vec<Check> {
    let seqs = all_sequences(b"abc", 4);
    let mut mismatches = 0usize;
    let mut first = None;
    for r in &seqs {
        for h in &seqs {
            let c = edit_distance(r, h);
            let ok = c.errors() == exhaustive_distance(r, h) && c.ref_len == r.len() && c.deletions + c.substitutions <= r.len();
            if !ok {
                mismatches += 1;
                first.get_or_insert_with(|| format!("{r:?} vs {h:?}: {c:?}"));
            }
        }
    }
    let pairs = seqs.len() * seqs.len();
    let mut out = vec![Check::new(
        format!("edit_distance vs exhaustive search, {pairs} pairs"),
        mismatches == 0,
        first.map_or_else(|| "all agree".into(), |f| format!("{mismatches} mismatches, first {f}")),
    )];

    let chars = |s: &str| s.chars().collect::<Vec<_>>();
    let kitten = edit_distance(&chars("kitten"), &chars("sitting")).errors();
    out.push(Check::new("kitten/sitting distance", kitten == 3, format!("distance {kitten}")));

    let pooled = wer(&[("a", "b"), ("a b c d e f g h i", "a b c d e f g h i")]);
    out.push(match pooled {
        Ok((rate, counts)) => Check::new(
            "pooled WER fixture",
            rate == 0.1 && counts.ref_len == 10 && counts.errors() == 1,
            format!("rate {rate} over N={}", counts.ref_len),
        ),
        Err(e) => Check::failed("pooled WER fixture", e),
    });
    let sub = wer(&[("a b c", "a x c")]);
    out.push(match sub {
        Ok((rate, _)) => Check::new("single substitution", rate == 1.0 / 3.0, format!("rate {rate}")),
        Err(e) => Check::failed("single substitution", e),
    });
    out
}

/// First Adadelta update of a parameter under a unit gradient from fresh
/// state, derived by hand: `E[g²] = 1−ρ`, `E[Δ²] = 0`.
pub fn adadelta_first_step_oracle(lr: f64) -> f64 {
    -lr * (ADADELTA_EPS / ((1.0 - ADADELTA_RHO) + ADADELTA_EPS)).sqrt()
}

/// Measures the first Adadelta update on a real parameter set; every
/// scalar must move by the same amount.
pub fn adadelta_first_step(lr: f64) -> Result<f64, String> {
    let cfg = grad_check_config(FusionMode::None, 0.3);
    let mut p = ModelParams::init(&cfg, 0).map_err(|e| e.to_string())?;
    let before = p.clone();
    let grads = p.iter().map(|(k, t)| (k.to_string(), Tensor::ones(t.shape()))).collect();
    let mut state = OptimState::new(OptimizerConfig::adadelta(lr), &p).map_err(|e| e.to_string())?;
    adadelta_step(&mut p, &grads, &mut state).map_err(|e| e.to_string())?;
    let deltas: Vec<f64> = p
        .iter()
        .flat_map(|(k, t)| {
            let b = before.get(k).expect("same keys");
            t.data().iter().zip(b.data()).map(|(x, y)| x - y).collect::<Vec<_>>()
        })
        .collect();
    let spread = deltas.iter().fold(0.0f64, |m, d| m.max((d - deltas[0]).abs()));
    if spread > 1e-15 {
        return Err(format!("updates differ across parameters by {spread:.3e}"));
    }
    Ok(deltas[0])
}

pub fn schedule_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for w in [1u64, 4, 25, 100, 4000, 25_000] {
        let s = w as f64;
        worst = worst.max((s.powf(-0.5) - s * s.powf(-1.5)).abs());
    }
    out.push(Check::within("noam branch continuity at warmup", worst, 1e-15));

    let spot = noam_lr(4, &ScheduleConfig::noam(1.0, 4, 64));
    out.push(match spot {
        Ok(v) => Check::new("noam spot value", v == 0.0625, format!("lr {v}")),
        Err(e) => Check::failed("noam spot value", e),
    });

    let cfg = ScheduleConfig::noam(5.0, 25_000, 64);
    let monotone = (1..=60_000u64).step_by(97).collect::<Vec<_>>().windows(2).all(|w| {
        let (a, b) = (noam_lr(w[0], &cfg).unwrap_or(f64::NAN), noam_lr(w[1], &cfg).unwrap_or(f64::NAN));
        if w[1] <= 25_000 {
            b > a
        } else if w[0] >= 25_000 {
            b < a
        } else {
            true
        }
    });
    out.push(Check::new("noam rises to warmup then decays", monotone, "factor 5, warmup 25000"));

    let expected = adadelta_first_step_oracle(0.1);
    out.push(match adadelta_first_step(0.1) {
        Ok(d) => {
            let mut c = Check::within("adadelta first step, lr 0.1, unit gradient", (d - expected).abs(), 1e-8);
            c.detail = format!("delta {d:.6e}, hand value {expected:.6e}; {}", c.detail);
            c
        }
        Err(e) => Check::failed("adadelta first step, lr 0.1, unit gradient", e),
    });
    out
}

/// A tiny trainer over random in-memory utterances, cheap enough to run
/// several epochs in well under a second.
pub fn tiny_trainer(seed: u64) -> Result<(Trainer, Vec<Example>), String> {
    let vocab = Vocab::from_chars("ab".chars()).map_err(|e| e.to_string())?;
    let features =
        FeatureSpec { config: FeatureConfig { n_mels: 4, ..FeatureConfig::default() }, ..FeatureSpec::default() };
    let mut model = grad_check_config(FusionMode::None, 0.3);
    model.input_dim = features.input_dim();
    model.vocab_size = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    for i in 0..6 {
        let t = rng.gen_range(4..=7);
        let len = rng.gen_range(1..=3);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(2..vocab.len())).collect();
        let feats: Vec<f64> = (0..t * model.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        data.push(Example {
            id: format!("u{i}"),
            features: Tensor::new(vec![t, model.input_dim], feats).map_err(|e| e.to_string())?,
            target: LabelSequence::new(ids, vocab.len()).map_err(|e| e.to_string())?,
            xvector: None,
        });
    }
    let config = CheckpointConfig { model, vocab, features, train: TrainOptions { batch_size: 4, ..TrainOptions::default() } };
    let trainer = Trainer::new(config, OptimizerConfig::noam_adam(1.0, 4, 16), seed, "tiny").map_err(|e| e.to_string())?;
    Ok((trainer, data))
}

/// Loss trace of `epochs` epochs, optionally interrupted after
/// `break_after` epochs by a serialise/deserialise/resume cycle.
pub fn loss_trace(epochs: u32, break_after: Option<u32>) -> Result<Vec<u64>, String> {
    let (mut t, data) = tiny_trainer(5)?;
    let mut trace = Vec::new();
    for e in 0..epochs {
        if break_after == Some(e) {
            let bytes = t.checkpoint().map_err(|e| e.to_string())?.to_bytes();
            t = Trainer::resume(Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?);
        }
        trace.push(t.run_epoch(&data).map_err(|e| e.to_string())?.train_loss.to_bits());
    }
    Ok(trace)
}

pub fn checkpoint_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let roundtrip = || -> Result<bool, String> {
        let (mut t, data) = tiny_trainer(2)?;
        t.run_epoch(&data).map_err(|e| e.to_string())?;
        let ckpt = t.checkpoint().map_err(|e| e.to_string())?;
        let path = std::env::temp_dir().join(format!("genadapt-verify-{}.ckpt", std::process::id()));
        ckpt.save(&path).map_err(|e| e.to_string())?;
        let loaded = Checkpoint::load(&path);
        let on_disk = std::fs::read(&path);
        let _ = std::fs::remove_file(&path);
        let loaded = loaded.map_err(|e| e.to_string())?;
        let bytes = ckpt.to_bytes();
        Ok(loaded == ckpt && loaded.to_bytes() == bytes && on_disk.map_err(|e| e.to_string())? == bytes)
    };
    out.push(match roundtrip() {
        Ok(ok) => Check::new("save/load round trip", ok, if ok { "bit-exact" } else { "bytes differ" }),
        Err(e) => Check::failed("save/load round trip", e),
    });
    for e in [1u32, 2] {
        let name = format!("resume after epoch {e} of 3");
        out.push(match (loss_trace(3, None), loss_trace(3, Some(e))) {
            (Ok(a), Ok(b)) => Check::new(name, a == b, if a == b { "identical loss trace" } else { "loss traces differ" }),
            (Err(x), _) | (_, Err(x)) => Check::failed(name, x),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn exhaustive_distance_basics() {
        assert_eq!(exhaustive_distance(b"", b"abc"), 3);
        assert_eq!(exhaustive_distance(b"abc", b"abc"), 0);
        assert_eq!(exhaustive_distance(b"ab", b"ba"), 2);
        assert_eq!(all_sequences(b"ab", 2).len(), 7);
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [Suite::CtcOracle, Suite::WerOracle, Suite::Schedule, Suite::CheckpointRoundtrip] {
            let r = run(s);
            assert!(r.passed, "{r:#?}");
        }
    }
}
