//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::io::Write;
use std::time::Instant;

use genadapt::data::{
    build_vocab, filter_gender, prepare_examples, split_train_dev, synth_toy_corpus, FeatureSpec, Gender, Manifest,
    PrepareOptions, ToyCorpusSpec, XVectorStore,
};
use genadapt::eval::Tokenization;
use genadapt::model::{encode, forward_loss, Example, FusionMode, ModelConfig, ModelParams};
use genadapt::numerics::Tensor;
use genadapt::optim::{
    finetune, noam_lr, train, CheckpointConfig, FinetuneRecipe, OptimizerConfig, ScheduleConfig, TrainOptions, Trainer,
};
use genadapt::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(n: u32, title: &str, start: Instant, o: &Outcome) -> bool {
    let line = format!(
        "criterion {n:>2} {} {title}: {} [{:.1}s]\n",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    // Written to the raw handle so the line survives output capture.
    let _ = std::io::stderr().write_all(line.as_bytes());
    o.passed
}

fn checks_outcome(checks: &[verify::Check]) -> Outcome {
    Outcome {
        passed: checks.iter().all(|c| c.passed),
        detail: checks.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect::<Vec<_>>().join("; "),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut o = checks_outcome(&verify::ctc_oracle(100, 2024));
    let secs = start.elapsed().as_secs_f64();
    o.passed &= secs < 10.0;
    o
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut passed = true;
    for lambda in [0.0, 0.3, 1.0] {
        match verify::grad_check_model(FusionMode::Sum, lambda) {
            Ok((err, n)) => {
                passed &= err <= 1e-4;
                parts.push(format!("lambda {lambda}: max rel err {err:.2e} over {n}"));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("lambda {lambda}: {e}"));
            }
        }
    }
    passed &= start.elapsed().as_secs_f64() < 60.0;
    Outcome { passed, detail: parts.join("; ") }
}

fn criterion_3() -> Outcome {
    checks_outcome(&verify::wer_oracle())
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for w in [1u64, 4, 100, 4000, 25_000] {
        let cfg = ScheduleConfig::noam(1.0, w, 64);
        let s = w as f64;
        let lhs = cfg.factor * 64f64.powf(-0.5) * s.powf(-0.5);
        let rhs = cfg.factor * 64f64.powf(-0.5) * s * s.powf(-1.5);
        worst = worst.max((lhs - rhs).abs()).max((noam_lr(w, &cfg).unwrap() - lhs).abs());
    }
    let spot = noam_lr(4, &ScheduleConfig::noam(1.0, 4, 64)).unwrap();
    Outcome {
        passed: worst <= 1e-15 && spot == 0.0625,
        detail: format!("continuity gap {worst:.1e}, spot value {spot}"),
    }
}

fn criterion_5() -> Outcome {
    const STATED: f64 = -4.4717e-4;
    let oracle = verify::adadelta_first_step_oracle(0.1);
    match verify::adadelta_first_step(0.1) {
        Ok(delta) => Outcome {
            passed: (delta - oracle).abs() <= 1e-8,
            detail: format!(
                "delta {delta:.7e} vs hand oracle {oracle:.7e} (gap {:.1e}); the rounded literal {STATED:e} sits {:.1e} away",
                (delta - oracle).abs(),
                (delta - STATED).abs()
            ),
        },
        Err(e) => Outcome { passed: false, detail: e },
    }
}

fn criterion_6() -> Outcome {
    checks_outcome(&verify::checkpoint_checks())
}

fn toy_config(vocab: genadapt::data::Vocab) -> CheckpointConfig {
    let features = FeatureSpec::default();
    let mut model = ModelConfig::new(vocab.len());
    model.input_dim = features.input_dim();
    CheckpointConfig { model, vocab, features, train: TrainOptions::default() }
}

fn toy_optimizer() -> OptimizerConfig {
    OptimizerConfig::noam_adam(0.3, 100, 64)
}

fn prepare(m: &Manifest, vocab: &genadapt::data::Vocab) -> Vec<Example> {
    prepare_examples(m, vocab, &PrepareOptions::default()).expect("toy corpus prepares")
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let m = synth_toy_corpus(&ToyCorpusSpec::default(), dir.path()).unwrap();
    let vocab = build_vocab(&m).unwrap();
    let data = prepare(&m, &vocab);
    let (records, ckpts) = train(&data, &[], toy_config(vocab), toy_optimizer(), 30, 0, &m.fingerprint()).unwrap();
    let losses: Vec<f64> = records.iter().map(|r| r.train_loss).collect();
    let decreasing = losses[..5].windows(2).all(|w| w[1] < w[0]);
    let trainer = Trainer::resume(ckpts.into_iter().last().unwrap());
    let cer = trainer.error_rate(&data, Tokenization::Char).unwrap().unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        passed: cer < 0.10 && decreasing && secs < 900.0,
        detail: format!(
            "{} utterances, train CER {:.3} after 30 epochs, first five losses {:?}",
            data.len(),
            cer,
            losses[..5].iter().map(|l| (l * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    }
}

struct GenderRun {
    base: [f64; 2],
    adapted: [f64; 2],
}

fn adaptation_run(seed: u64) -> GenderRun {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_toy_corpus(&ToyCorpusSpec { seed, ..ToyCorpusSpec::default() }, dir.path()).unwrap();
    let vocab = build_vocab(&m).unwrap();
    let (train_m, dev_m) = split_train_dev(&m, 0.9, seed).unwrap();
    let train_set = prepare(&train_m, &vocab);
    let male_train = prepare(&filter_gender(&train_m, Gender::M), &vocab);
    let dev = [prepare(&filter_gender(&dev_m, Gender::M), &vocab), prepare(&filter_gender(&dev_m, Gender::F), &vocab)];
    let wers = |t: &Trainer| dev.each_ref().map(|d| t.error_rate(d, Tokenization::Word).unwrap().unwrap());

    let (_, base) = train(&train_set, &[], toy_config(vocab), toy_optimizer(), 30, seed, &m.fingerprint()).unwrap();
    let base = base.into_iter().last().unwrap();
    let before = wers(&Trainer::resume(base.clone()));
    let recipe = FinetuneRecipe::default();
    let (_, tuned) = finetune(&base, &recipe, &male_train, &[], seed, &m.fingerprint()).unwrap();
    let after = wers(&Trainer::resume(tuned.into_iter().last().unwrap()));
    GenderRun { base: before, adapted: after }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_8() -> Outcome {
    let runs: Vec<GenderRun> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3u64).map(|seed| s.spawn(move || adaptation_run(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let med = |f: &dyn Fn(&GenderRun) -> f64| median(runs.iter().map(f).collect());
    let (m_base, m_ad) = (med(&|r| r.base[0]), med(&|r| r.adapted[0]));
    let (f_base, f_ad) = (med(&|r| r.base[1]), med(&|r| r.adapted[1]));
    let male_gain = m_base - m_ad;
    let female_gain = f_base - f_ad;
    Outcome {
        passed: m_ad <= m_base && female_gain <= male_gain,
        detail: format!(
            "median dev WER male {m_base:.3} -> {m_ad:.3}, female {f_base:.3} -> {f_ad:.3} \
             (per seed male {:?}, female {:?})",
            runs.iter().map(|r| format!("{:.3}->{:.3}", r.base[0], r.adapted[0])).collect::<Vec<_>>(),
            runs.iter().map(|r| format!("{:.3}->{:.3}", r.base[1], r.adapted[1])).collect::<Vec<_>>(),
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut notes = Vec::new();
    let mut passed = true;
    let base = verify::grad_check_config(FusionMode::None, 0.3);
    let t = 5;
    let x = Tensor::new(vec![t, base.input_dim], (0..t * base.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap();
    let xvec = XVectorStore::Stub { dim: base.xvector_dim }.lookup("spk-a").unwrap();

    for mode in [FusionMode::Sum, FusionMode::Concat] {
        let cfg = ModelConfig { fusion: mode, ..base.clone() };
        let p = ModelParams::init(&cfg, 4).unwrap();
        let shape = encode(&x, Some(&xvec), &cfg, &p).map(|e| e.shape().to_vec());
        let ok = matches!(&shape, Ok(s) if s == &[t, cfg.d_model]);
        passed &= ok;
        notes.push(format!("{mode:?} encoder output {shape:?}"));
    }

    let plain = base.clone();
    let capable = ModelConfig { fusion: FusionMode::Sum, ..base.clone() };
    let shared: std::collections::BTreeMap<String, Tensor> = ModelParams::init(&capable, 9)
        .unwrap()
        .iter()
        .filter(|(k, _)| !k.starts_with("fuse."))
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect();
    let restricted = ModelParams::from_tensors(&plain, shared).unwrap();
    let own = ModelParams::init(&plain, 9).unwrap();
    let ex = Example {
        id: "u".into(),
        features: x.clone(),
        target: genadapt::ctc::LabelSequence::new(vec![2, 3], plain.vocab_size).unwrap(),
        xvector: None,
    };
    let bits = |p: &ModelParams| {
        let enc = encode(&x, None, &plain, p).unwrap();
        let loss = forward_loss(std::slice::from_ref(&ex), &plain, p).unwrap().total;
        (enc.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), loss.to_bits())
    };
    let same = restricted == own && bits(&restricted) == bits(&own);
    passed &= same;
    notes.push(format!("none vs fusion-free bit-identical: {same}"));

    for mode in [FusionMode::None, FusionMode::Sum, FusionMode::Concat] {
        match verify::grad_check_model(mode, 0.3) {
            Ok((err, _)) => {
                passed &= err <= 1e-4;
                notes.push(format!("{mode:?} grad check {err:.2e}"));
            }
            Err(e) => {
                passed = false;
                notes.push(format!("{mode:?} grad check error {e}"));
            }
        }
    }
    Outcome { passed, detail: notes.join("; ") }
}

fn criterion_10() -> Outcome {
    let (mut t, data) = verify::tiny_trainer(3).unwrap();
    t.run_epoch(&data).unwrap();
    let base = t.checkpoint().unwrap();
    let recipe = FinetuneRecipe { freeze: vec!["enc.".into()], ..FinetuneRecipe::default() };
    let mut ft = Trainer::finetune(&base, &recipe, 3, "tiny").unwrap();
    for i in 0..5 {
        ft.step(&data[i % data.len()..][..1]).unwrap();
    }
    let (mut enc_same, mut enc_n, mut dec_changed) = (true, 0, 0);
    for (k, v) in ft.params().iter() {
        let before = base.params.get(k).unwrap();
        let identical = v.data().iter().zip(before.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if k.starts_with("enc.") {
            enc_same &= identical;
            enc_n += 1;
        } else if k.starts_with("dec.") && !identical {
            dec_changed += 1;
        }
    }
    Outcome {
        passed: enc_same && enc_n > 0 && dec_changed > 0,
        detail: format!("{enc_n} encoder tensors bit-identical: {enc_same}; decoder tensors changed: {dec_changed}"),
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "CTC oracle equivalence", criterion_1),
        (2, "full-model gradient check", criterion_2),
        (3, "WER oracle", criterion_3),
        (4, "Noam schedule", criterion_4),
        (5, "Adadelta first step", criterion_5),
        (6, "checkpoint integrity", criterion_6),
        (7, "overfit sanity", criterion_7),
        (8, "gender-adaptation direction", criterion_8),
        (9, "fusion contracts", criterion_9),
        (10, "freezing contract", criterion_10),
    ];
    let mut failed = Vec::new();
    for (n, title, run) in criteria {
        let start = Instant::now();
        if !report(n, title, start, &run()) {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
