use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_freeze, clip_global_norm, validate_freeze, Checkpoint, CheckpointConfig, OptimError, OptimState,
    OptimizerConfig, OptimizerKind, RngState,
};
use crate::eval;
use crate::model::{greedy_decode, loss_and_gradients, Example, ModelParams};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Parameter-name prefixes whose gradients are zeroed.
    pub freeze: Vec<String>,
    /// Abort on an utterance too short for its transcript instead of
    /// skipping it.
    pub strict: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { batch_size: 8, clip_norm: Some(5.0), freeze: Vec::new(), strict: false }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub dev_wer: Option<f64>,
    pub lr_last: f64,
}

/// Fine-tuning settings: a fresh optimizer on a subset, starting from a
/// trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneRecipe {
    /// Expected epoch of the base checkpoint, if pinned.
    pub base_epoch: Option<u32>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Noam factor; only read by `noam_adam`.
    pub factor: f64,
    /// Only read by `noam_adam`.
    pub warmup_steps: u64,
    pub epochs: u32,
    pub freeze: Vec<String>,
}

impl Default for FinetuneRecipe {
    fn default() -> Self {
        Self {
            base_epoch: None,
            optimizer: OptimizerKind::Adadelta,
            lr: 0.1,
            factor: 5.0,
            warmup_steps: 4000,
            epochs: 20,
            freeze: Vec::new(),
        }
    }
}

impl FinetuneRecipe {
    pub fn optimizer_config(&self, d_model: usize) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::NoamAdam => OptimizerConfig::noam_adam(self.factor, self.warmup_steps, d_model),
            OptimizerKind::Adadelta => OptimizerConfig::adadelta(self.lr),
            OptimizerKind::Adam => OptimizerConfig::adam(self.lr),
        }
    }

    pub fn validate(&self, base: &Checkpoint) -> Result<(), OptimError> {
        if self.epochs == 0 {
            return Err(OptimError::Recipe("epochs must be >= 1".into()));
        }
        if let Some(e) = self.base_epoch {
            if e != base.epoch {
                return Err(OptimError::Recipe(format!("recipe expects base epoch {e}, checkpoint is epoch {}", base.epoch)));
            }
        }
        validate_freeze(&base.params, &self.freeze)?;
        self.optimizer_config(base.config.model.d_model).validate()
    }
}

/// Mutable training state for one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: CheckpointConfig,
    params: ModelParams,
    optim: OptimState,
    rng: ChaCha8Rng,
    epoch: u32,
    manifest_fingerprint: String,
}

impl Trainer {
    /// Freshly initialised model; `seed` drives initialisation and batch
    /// order.
    pub fn new(
        config: CheckpointConfig,
        optimizer: OptimizerConfig,
        seed: u64,
        manifest_fingerprint: impl Into<String>,
    ) -> Result<Self, OptimError> {
        check_config(&config)?;
        let params = ModelParams::init(&config.model, seed)?;
        validate_freeze(&params, &config.train.freeze)?;
        let optim = OptimState::new(optimizer, &params)?;
        Ok(Self { config, params, optim, rng: batch_rng(seed), epoch: 0, manifest_fingerprint: manifest_fingerprint.into() })
    }

    /// Continues exactly where `ckpt` stopped.
    pub fn resume(ckpt: Checkpoint) -> Self {
        Self {
            rng: ckpt.rng.restore(),
            config: ckpt.config,
            params: ckpt.params,
            optim: ckpt.optim,
            epoch: ckpt.epoch,
            manifest_fingerprint: ckpt.manifest_fingerprint,
        }
    }

    /// Carries parameters over from `base` and replaces the optimizer with a
    /// fresh one built from `recipe`. Epochs count from zero again.
    pub fn finetune(
        base: &Checkpoint,
        recipe: &FinetuneRecipe,
        seed: u64,
        manifest_fingerprint: impl Into<String>,
    ) -> Result<Self, OptimError> {
        recipe.validate(base)?;
        if recipe.optimizer != OptimizerKind::NoamAdam {
            log::info!("warmup {} not used: {:?} runs at a constant rate {}", recipe.warmup_steps, recipe.optimizer, recipe.lr);
        }
        let mut config = base.config.clone();
        config.train.freeze = recipe.freeze.clone();
        let optim = OptimState::new(recipe.optimizer_config(config.model.d_model), &base.params)?;
        Ok(Self {
            config,
            params: base.params.clone(),
            optim,
            rng: batch_rng(seed),
            epoch: 0,
            manifest_fingerprint: manifest_fingerprint.into(),
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &CheckpointConfig {
        &self.config
    }

    pub fn optim(&self) -> &OptimState {
        &self.optim
    }

    /// Drops (or, when strict, rejects) utterances whose transcript cannot be
    /// aligned to their frames.
    fn feasible<'e>(&self, data: &'e [Example]) -> Result<Vec<&'e Example>, OptimError> {
        let mut out = Vec::with_capacity(data.len());
        for ex in data {
            let frames = ex.features.shape()[0];
            let needed = ex.target.min_frames();
            if frames >= needed {
                out.push(ex);
            } else if self.config.train.strict {
                return Err(OptimError::Infeasible { utt: ex.id.clone(), frames, needed });
            } else {
                log::warn!("skipping {}: {frames} frames cannot align {needed} required", ex.id);
            }
        }
        Ok(out)
    }

    /// Batches of similar length in a seeded random order.
    fn batches<'e>(&mut self, data: &[&'e Example]) -> Vec<Vec<&'e Example>> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by_key(|&i| (data[i].features.shape()[0], i));
        let mut batches: Vec<Vec<&Example>> =
            order.chunks(self.config.train.batch_size).map(|c| c.iter().map(|&i| data[i]).collect()).collect();
        batches.shuffle(&mut self.rng);
        batches
    }

    /// One optimizer update on `batch`; returns (loss, lr).
    pub fn step(&mut self, batch: &[Example]) -> Result<(f64, f64), OptimError> {
        let (parts, mut grads) = loss_and_gradients(batch, &self.config.model, &self.params)?;
        self.update(&mut grads).map(|lr| (parts.total, lr))
    }

    fn update(&mut self, grads: &mut BTreeMap<String, Tensor>) -> Result<f64, OptimError> {
        apply_freeze(grads, &self.config.train.freeze)?;
        if let Some(max) = self.config.train.clip_norm {
            clip_global_norm(grads, max)?;
        }
        self.optim.apply(&mut self.params, grads)
    }

    /// One pass over `train`; `dev_wer` is left empty.
    pub fn run_epoch(&mut self, train: &[Example]) -> Result<EpochRecord, OptimError> {
        let usable = self.feasible(train)?;
        if usable.is_empty() {
            return Err(OptimError::EmptyData("no usable training utterances".into()));
        }
        let mut total = 0.0;
        let mut lr_last = 0.0;
        for batch in self.batches(&usable) {
            let owned: Vec<Example> = batch.into_iter().cloned().collect();
            let (loss, mut grads) = loss_and_gradients(&owned, &self.config.model, &self.params)?;
            lr_last = self.update(&mut grads)?;
            total += loss.total * owned.len() as f64;
        }
        self.epoch += 1;
        Ok(EpochRecord { epoch: self.epoch, train_loss: total / usable.len() as f64, dev_wer: None, lr_last })
    }

    pub fn transcribe(&self, ex: &Example) -> Result<String, OptimError> {
        let ids = greedy_decode(&ex.features, ex.xvector.as_ref(), &self.config.model, &self.params)?;
        Ok(self.config.vocab.decode(&ids))
    }

    /// Pooled error rate of greedy transcripts; `None` for an empty set.
    pub fn error_rate(&self, data: &[Example], tok: eval::Tokenization) -> Result<Option<f64>, OptimError> {
        if data.is_empty() {
            return Ok(None);
        }
        let pairs = data
            .iter()
            .map(|ex| Ok((self.config.vocab.decode(ex.target.ids()), self.transcribe(ex)?)))
            .collect::<Result<Vec<_>, OptimError>>()?;
        Ok(Some(eval::error_rate(&pairs, tok)?.0))
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, OptimError> {
        if self.epoch == 0 {
            return Err(OptimError::Contract("no epoch has completed yet".into()));
        }
        Ok(Checkpoint {
            epoch: self.epoch,
            config: self.config.clone(),
            params: self.params.clone(),
            optim: self.optim.clone(),
            rng: RngState::capture(&self.rng),
            manifest_fingerprint: self.manifest_fingerprint.clone(),
        })
    }

    /// Runs `epochs` epochs, scoring `dev` after each and handing every
    /// record with its checkpoint to `on_epoch`.
    pub fn fit(
        &mut self,
        train: &[Example],
        dev: &[Example],
        epochs: u32,
        mut on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<(), OptimError>,
    ) -> Result<Vec<EpochRecord>, OptimError> {
        if epochs == 0 {
            return Err(OptimError::Config("epochs must be >= 1".into()));
        }
        let mut records = Vec::with_capacity(epochs as usize);
        for _ in 0..epochs {
            let mut rec = self.run_epoch(train)?;
            rec.dev_wer = self.error_rate(dev, eval::Tokenization::Word)?;
            log::info!(
                "epoch {} loss {:.4} dev WER {} lr {:.3e}",
                rec.epoch,
                rec.train_loss,
                rec.dev_wer.map_or("-".into(), |w| format!("{:.1}%", 100.0 * w)),
                rec.lr_last
            );
            on_epoch(&rec, &self.checkpoint()?)?;
            records.push(rec);
        }
        Ok(records)
    }
}

fn batch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn check_config(c: &CheckpointConfig) -> Result<(), OptimError> {
    c.model.validate()?;
    if c.vocab.len() != c.model.vocab_size {
        return Err(OptimError::Config(format!(
            "model vocab_size {} but vocabulary has {} symbols",
            c.model.vocab_size,
            c.vocab.len()
        )));
    }
    if c.features.input_dim() != c.model.input_dim {
        return Err(OptimError::Config(format!(
            "model input_dim {} but features produce {}",
            c.model.input_dim,
            c.features.input_dim()
        )));
    }
    if c.train.batch_size == 0 {
        return Err(OptimError::Config("batch_size must be >= 1".into()));
    }
    if let Some(n) = c.train.clip_norm {
        if !(n > 0.0) {
            return Err(OptimError::Config(format!("clip_norm {n} must be positive")));
        }
    }
    Ok(())
}

/// Trains a fresh model for `epochs` epochs, keeping every checkpoint.
pub fn train(
    train: &[Example],
    dev: &[Example],
    config: CheckpointConfig,
    optimizer: OptimizerConfig,
    epochs: u32,
    seed: u64,
    manifest_fingerprint: &str,
) -> Result<(Vec<EpochRecord>, Vec<Checkpoint>), OptimError> {
    if train.is_empty() {
        return Err(OptimError::EmptyData("training set is empty".into()));
    }
    let mut trainer = Trainer::new(config, optimizer, seed, manifest_fingerprint)?;
    let mut ckpts = Vec::new();
    let records = trainer.fit(train, dev, epochs, |_, c| {
        ckpts.push(c.clone());
        Ok(())
    })?;
    Ok((records, ckpts))
}

/// Fine-tunes `base` on `subset` per `recipe`, keeping every checkpoint.
pub fn finetune(
    base: &Checkpoint,
    recipe: &FinetuneRecipe,
    subset: &[Example],
    dev: &[Example],
    seed: u64,
    manifest_fingerprint: &str,
) -> Result<(Vec<EpochRecord>, Vec<Checkpoint>), OptimError> {
    if subset.is_empty() {
        return Err(OptimError::Recipe("fine-tuning subset is empty".into()));
    }
    let mut trainer = Trainer::finetune(base, recipe, seed, manifest_fingerprint)?;
    let mut ckpts = Vec::new();
    let records = trainer.fit(subset, dev, recipe.epochs, |_, c| {
        ckpts.push(c.clone());
        Ok(())
    })?;
    Ok((records, ckpts))
}
