use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use genadapt::data::{
    build_vocab, filter_gender, load_manifest, prepare_examples, split_train_dev, synth_toy_corpus, FeatureSpec,
    Manifest, PrepareOptions, ToyCorpusSpec, Vocab, XVectorStore,
};
use genadapt::eval::{grouped_report, render_table, reports_to_json, WerReport};
use genadapt::features::FeatureConfig;
use genadapt::model::{Example, FusionMode, ModelConfig};
use genadapt::optim::{
    Checkpoint, CheckpointConfig, EpochRecord, FinetuneRecipe, OptimError, OptimizerConfig, OptimizerKind,
    TrainOptions, Trainer,
};
use genadapt::verify::{self, Suite, SuiteReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Code};
use crate::settings::*;

/// Fixed output tree under `--out-dir`.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn create(root: &Path) -> CliResult<Self> {
        for sub in ["checkpoints", "logs", "reports"] {
            std::fs::create_dir_all(root.join(sub))
                .map_err(|e| CliError::io(format!("cannot create {}: {e}", root.join(sub).display())))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    fn checkpoint(&self, epoch: u32) -> PathBuf {
        self.root.join("checkpoints").join(checkpoint_name(epoch))
    }

    fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    /// Records the fully resolved settings of `command`.
    fn write_config(&self, command: &str, settings: &impl Serialize) -> CliResult<()> {
        write_text(&self.log(&format!("{command}.config.json")), &to_json(settings))
    }
}

fn checkpoint_name(epoch: u32) -> String {
    format!("epoch-{epoch:03}.ckpt")
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("settings serialise") + "\n"
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn open_manifest(path: &Option<PathBuf>) -> CliResult<Manifest> {
    let path = require(path, "manifest")?;
    load_manifest(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))
}

fn xvector_store(spec: &Option<String>, fusion: FusionMode, dim: usize) -> CliResult<Option<XVectorStore>> {
    match (fusion, spec.as_deref()) {
        (FusionMode::None, Some(_)) => {
            log::warn!("--xvector-store ignored: the model does not fuse x-vectors");
            Ok(None)
        }
        (FusionMode::None, None) => Ok(None),
        (_, None) => Err(CliError::usage("x-vector fusion needs --xvector-store (stub or a directory)")),
        (_, Some("stub")) => Ok(Some(XVectorStore::Stub { dim })),
        (_, Some(dir)) => Ok(Some(XVectorStore::Dir { dir: dir.into(), dim })),
    }
}

fn prepare(m: &Manifest, vocab: &Vocab, features: &FeatureSpec, cache: Option<PathBuf>, xv: Option<XVectorStore>) -> CliResult<Vec<Example>> {
    let opts = PrepareOptions { features: features.clone(), cache_dir: cache, xvectors: xv };
    Ok(prepare_examples(m, vocab, &opts)?)
}

/// Gender filter followed by the seeded per-speaker split.
fn split(m: &Manifest, gender: Option<genadapt::data::Gender>, ratio: f64, seed: u64) -> CliResult<(Manifest, Manifest)> {
    let subset = match gender {
        Some(g) => filter_gender(m, g),
        None => m.clone(),
    };
    if subset.is_empty() {
        return Err(CliError::usage("no utterances left after the gender filter"));
    }
    Ok(split_train_dev(&subset, ratio, seed)?)
}

pub fn synth(flags: SynthFlags) -> CliResult<ExitCode> {
    let mut s: SynthSettings = resolve(&flags, flags.config.as_deref())?;
    let seed = resolve_seed(s.seed)?;
    s.seed = Some(seed);
    let out = require(&s.out_dir, "out-dir")?.clone();
    let spec = ToyCorpusSpec {
        speakers_per_gender: s.speakers_per_gender,
        utterances_per_speaker: s.utterances_per_speaker,
        alphabet: s.alphabet.clone(),
        min_len: s.min_len,
        max_len: s.max_len,
        sample_rate: s.sample_rate,
        seed,
        noise_level: s.noise_level,
        ..ToyCorpusSpec::default()
    };
    spec.validate()?;
    let logs = out.join("logs");
    std::fs::create_dir_all(&logs).map_err(|e| CliError::io(format!("cannot create {}: {e}", logs.display())))?;
    let m = synth_toy_corpus(&spec, &out)?;
    write_text(&logs.join("synth.config.json"), &to_json(&s))?;
    log::info!("{} utterances from {} speakers", m.len(), 2 * spec.speakers_per_gender);
    println!("{}", out.join("manifest.jsonl").display());
    Ok(ExitCode::SUCCESS)
}

pub fn features(flags: FeaturesFlags) -> CliResult<ExitCode> {
    let s: FeaturesSettings = resolve(&flags, flags.config.as_deref())?;
    let m = open_manifest(&s.manifest)?;
    let layout = Layout::create(require(&s.out_dir, "out-dir")?)?;
    layout.write_config("features", &s)?;
    let spec = FeatureSpec { config: FeatureConfig { n_mels: s.n_mels, ..FeatureConfig::default() }, kind: s.features, cmvn: s.cmvn };
    let vocab = build_vocab(&m)?;
    let ex = prepare(&m, &vocab, &spec, Some(layout.features()), None)?;
    let frames: usize = ex.iter().map(|e| e.features.rows()).sum();
    println!("{} utterances, {frames} frames of {} features, cached in {}", ex.len(), spec.input_dim(), layout.features().display());
    Ok(ExitCode::SUCCESS)
}

/// Runs `trainer` for `epochs`, writing one checkpoint and one log line
/// per epoch.
fn run_epochs(mut trainer: Trainer, train: &[Example], dev: &[Example], epochs: u32, layout: &Layout) -> CliResult<Vec<EpochRecord>> {
    let log_path = layout.log("train.jsonl");
    let mut log = BufWriter::new(
        File::create(&log_path).map_err(|e| CliError::io(format!("cannot create {}: {e}", log_path.display())))?,
    );
    let records = trainer.fit(train, dev, epochs, |rec, ckpt| {
        ckpt.save(layout.checkpoint(rec.epoch))?;
        writeln!(log, "{}", serde_json::to_string(rec).expect("record serialises"))
            .and_then(|_| log.flush())
            .map_err(|e| OptimError::Checkpoint(e.into()))
    })?;
    Ok(records)
}

fn summarise(records: &[EpochRecord], layout: &Layout) {
    if let Some(last) = records.last() {
        let wer = last.dev_wer.map_or_else(|| "n/a".into(), |w| format!("{:.1}%", 100.0 * w));
        println!(
            "{} epochs, final train loss {:.4}, dev WER {wer}, last checkpoint {}",
            records.len(),
            last.train_loss,
            layout.checkpoint(last.epoch).display()
        );
    }
}

pub fn train(flags: TrainFlags) -> CliResult<ExitCode> {
    let mut s: TrainSettings = resolve(&flags, flags.config.as_deref())?;
    let seed = resolve_seed(s.seed)?;
    s.seed = Some(seed);
    let split_seed = *s.split_seed.get_or_insert(seed);
    if s.epochs == 0 {
        return Err(CliError::usage("--epochs must be >= 1"));
    }

    let m = open_manifest(&s.manifest)?;
    let vocab = build_vocab(&m)?;
    let (train_m, dev_m) = split(&m, s.gender, s.split_ratio, split_seed)?;
    let features = FeatureSpec {
        config: FeatureConfig { n_mels: s.n_mels, ..FeatureConfig::default() },
        kind: s.features,
        cmvn: s.cmvn,
    };
    let model = ModelConfig {
        input_dim: features.input_dim(),
        d_model: s.d_model,
        n_heads: s.n_heads,
        enc_layers: s.enc_layers,
        dec_layers: s.dec_layers,
        ff_dim: s.ff_dim,
        vocab_size: vocab.len(),
        xvector_dim: s.xvector_dim,
        fusion: s.xvector_fusion,
        lambda_ctc: s.lambda_ctc,
    };
    let optimizer = match s.optimizer {
        OptimizerKind::NoamAdam => OptimizerConfig::noam_adam(s.noam_factor, s.warmup_steps, s.d_model),
        OptimizerKind::Adadelta => OptimizerConfig::adadelta(s.lr),
        OptimizerKind::Adam => OptimizerConfig::adam(s.lr),
    };
    let options = TrainOptions {
        batch_size: s.batch_size,
        clip_norm: (s.clip_norm > 0.0).then_some(s.clip_norm),
        freeze: s.freeze.clone(),
        strict: s.strict,
    };
    let xv = xvector_store(&s.xvector_store, s.xvector_fusion, s.xvector_dim)?;
    let config = CheckpointConfig { model, vocab, features, train: options };
    let trainer = Trainer::new(config.clone(), optimizer, seed, train_m.fingerprint())?;

    let layout = Layout::create(require(&s.out_dir, "out-dir")?)?;
    layout.write_config("train", &s)?;
    let cache = Some(layout.features());
    let train_set = prepare(&train_m, &config.vocab, &config.features, cache.clone(), xv.clone())?;
    let dev_set = prepare(&dev_m, &config.vocab, &config.features, cache, xv)?;
    log::info!("training on {} utterances, {} held out", train_set.len(), dev_set.len());
    let records = run_epochs(trainer, &train_set, &dev_set, s.epochs, &layout)?;
    summarise(&records, &layout);
    Ok(ExitCode::SUCCESS)
}

/// Highest-numbered `epoch-NNN.ckpt` under `<run>/checkpoints`.
fn latest_checkpoint(run: &Path) -> CliResult<PathBuf> {
    let dir = run.join("checkpoints");
    let entries = std::fs::read_dir(&dir).map_err(|e| CliError::io(format!("cannot list {}: {e}", dir.display())))?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let n: u32 = name.strip_prefix("epoch-")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
        .ok_or_else(|| CliError::io(format!("no checkpoints in {}", dir.display())))
}

pub fn finetune(flags: FinetuneFlags) -> CliResult<ExitCode> {
    let mut s: FinetuneSettings = resolve(&flags, flags.config.as_deref())?;
    let seed = resolve_seed(s.seed)?;
    s.seed = Some(seed);
    let split_seed = *s.split_seed.get_or_insert(seed);
    let base_path = match (&s.base, &s.base_run) {
        (Some(p), None) => p.clone(),
        (None, Some(run)) => match s.from_epoch {
            Some(e) => run.join("checkpoints").join(checkpoint_name(e)),
            None => latest_checkpoint(run)?,
        },
        (Some(_), Some(_)) => return Err(CliError::usage("give either --base or --base-run, not both")),
        (None, None) => return Err(CliError::usage("missing base checkpoint: --base or --base-run")),
    };
    let base = Checkpoint::load(&base_path).map_err(|e| CliError::from(e).context(format!("loading {}", base_path.display())))?;
    s.base = Some(base_path);
    s.from_epoch = Some(base.epoch);

    let m = open_manifest(&s.manifest)?;
    base.ensure_compatible(&build_vocab(&m)?, &base.config.features)?;
    let (train_m, dev_m) = split(&m, s.gender, s.split_ratio, split_seed)?;
    let recipe = FinetuneRecipe {
        base_epoch: Some(base.epoch),
        optimizer: s.optimizer,
        lr: s.lr,
        factor: s.noam_factor,
        warmup_steps: s.warmup_steps,
        epochs: s.epochs,
        freeze: s.freeze.clone(),
    };
    let trainer = Trainer::finetune(&base, &recipe, seed, train_m.fingerprint())?;
    let model = &base.config.model;
    let xv = xvector_store(&s.xvector_store, model.fusion, model.xvector_dim)?;

    let layout = Layout::create(require(&s.out_dir, "out-dir")?)?;
    layout.write_config("finetune", &s)?;
    let cache = Some(layout.features());
    let (vocab, features) = (&base.config.vocab, &base.config.features);
    let train_set = prepare(&train_m, vocab, features, cache.clone(), xv.clone())?;
    let dev_set = prepare(&dev_m, vocab, features, cache, xv)?;
    log::info!("fine-tuning from epoch {} on {} utterances", base.epoch, train_set.len());
    let records = run_epochs(trainer, &train_set, &dev_set, recipe.epochs, &layout)?;
    summarise(&records, &layout);
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HypLine {
    id: String,
    hyp: String,
}

fn read_hyps(path: &Path) -> CliResult<Vec<(String, String)>> {
    let f = File::open(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let h: HypLine =
            serde_json::from_str(&line).map_err(|e| CliError::io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push((h.id, h.hyp));
    }
    Ok(out)
}

/// `run/epoch-NNN` for checkpoints inside a run tree, else the file stem.
fn default_name(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let parent = path.parent();
    match (parent.and_then(Path::file_name), parent.and_then(Path::parent).and_then(Path::file_name)) {
        (Some(c), Some(run)) if c == "checkpoints" => format!("{}/{stem}", run.to_string_lossy()),
        _ => stem,
    }
}

pub fn eval(flags: EvalFlags) -> CliResult<ExitCode> {
    let mut s: EvalSettings = resolve(&flags, flags.config.as_deref())?;
    let seed = resolve_seed(s.seed)?;
    s.seed = Some(seed);
    let split_seed = *s.split_seed.get_or_insert(seed);
    let sources = s.checkpoints.len() + s.hyps.len();
    if sources == 0 {
        return Err(CliError::usage("nothing to score: give --checkpoint or --hyps"));
    }
    if !s.names.is_empty() && s.names.len() != sources {
        return Err(CliError::usage(format!("{} --name values for {sources} models", s.names.len())));
    }
    let m = open_manifest(&s.manifest)?;
    let (train_m, dev_m) = split(&m, s.gender, s.split_ratio, split_seed)?;
    let part = match s.split {
        SplitPart::Train => train_m,
        SplitPart::Dev => dev_m,
        SplitPart::All => Manifest::new(m.source.clone(), m.root.clone(), {
            let mut u = train_m.utterances().to_vec();
            u.extend_from_slice(dev_m.utterances());
            u
        })?,
    };
    if part.is_empty() {
        return Err(CliError::usage("the selected split is empty"));
    }
    let layout = s.out_dir.as_deref().map(Layout::create).transpose()?;
    if let Some(l) = &layout {
        l.write_config("eval", &s)?;
    } else {
        log::info!("resolved settings: {}", serde_json::to_string(&s).expect("settings serialise"));
    }

    let mut names = s.names.clone().into_iter();
    let mut reports: Vec<WerReport> = Vec::new();
    for path in &s.checkpoints {
        let ckpt = Checkpoint::load(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))?;
        let name = names.next().unwrap_or_else(|| default_name(path));
        let model = &ckpt.config.model;
        let xv = xvector_store(&s.xvector_store, model.fusion, model.xvector_dim)?;
        let cache = layout.as_ref().map(Layout::features);
        let ex = prepare(&part, &ckpt.config.vocab, &ckpt.config.features, cache, xv)?;
        let trainer = Trainer::resume(ckpt);
        let hyps = ex.iter().map(|e| Ok((e.id.clone(), trainer.transcribe(e)?))).collect::<Result<Vec<_>, OptimError>>()?;
        reports.push(grouped_report(&name, &hyps, &m, s.group, s.tokenization)?);
    }
    for path in &s.hyps {
        let name = names.next().unwrap_or_else(|| default_name(path));
        reports.push(grouped_report(&name, &read_hyps(path)?, &m, s.group, s.tokenization)?);
    }

    let table = render_table(&reports)?;
    print!("{table}");
    if let Some(l) = &layout {
        write_text(&l.report("wer.json"), &(reports_to_json(&reports) + "\n"))?;
        write_text(&l.report("wer.txt"), &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(args: VerifyArgs) -> CliResult<ExitCode> {
    let suites: Vec<Suite> = match args.suite.as_str() {
        "all" => Suite::ALL.to_vec(),
        name => vec![name.parse().map_err(|e| CliError::usage(format!("{e}; expected one of {} or all", suite_names())))?],
    };
    let layout = args.out_dir.as_deref().map(Layout::create).transpose()?;
    let reports: Vec<SuiteReport> = suites
        .into_iter()
        .map(|suite| {
            let r = verify::run(suite);
            for c in &r.checks {
                eprintln!("{} {}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, r.suite, c.name, c.detail);
            }
            r
        })
        .collect();
    let json = serde_json::to_string_pretty(&reports).expect("reports serialise") + "\n";
    print!("{json}");
    if let Some(l) = &layout {
        write_text(&l.report("verify.json"), &json)?;
    }
    Ok(if reports.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { Code::Failed.into() })
}

fn suite_names() -> String {
    Suite::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}
