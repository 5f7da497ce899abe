//! RMSprop and the mini-batch training loop.

use std::collections::BTreeSet;

use log::{debug, info};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::classify_batch;
use crate::features::{fit_norm_stats_on_samples, HistogramSpec, NormStats, SampleTensor};
use crate::metrics::{acer, balanced_accuracy, EvalOutcome};
use crate::nn::{Mode, Model, ModelConfig, Params, Variant, ATTACK, BONAFIDE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

/// Running averages of squared gradients, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub config: RmspropConfig,
    pub mean_square: Params,
}

impl RmspropState {
    pub fn new(config: RmspropConfig, model: &ModelConfig) -> Self {
        Self {
            config,
            mean_square: Params::zeros(model),
        }
    }
}

/// `s <- a*s + (1-a)*g^2; theta <- theta - lr*g/(sqrt(s) + eps)` elementwise.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], mean_square: &mut [f64], cfg: &RmspropConfig) {
    for ((t, &g), s) in theta.iter_mut().zip(grad).zip(mean_square.iter_mut()) {
        *s = cfg.decay * *s + (1.0 - cfg.decay) * g * g;
        *t -= cfg.lr * g / (s.sqrt() + cfg.eps);
    }
}

/// Applies one update to every tensor. Non-finite gradients abort the step
/// before anything is modified.
pub fn rmsprop_step(params: &mut Params, grads: &Params, state: &mut RmspropState) -> Result<()> {
    for (i, g) in grads.tensors().iter().enumerate() {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of tensor {i} at index {pos} is {}",
                g[pos]
            )));
        }
    }
    let cfg = state.config;
    for ((theta, g), s) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.mean_square.tensors_mut())
    {
        rmsprop_update(theta, g, s, &cfg);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmspropConfig,
    pub seed: u64,
    pub variant: Variant,
    /// Hidden units; `None` uses the variant's default.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: RmspropConfig::default(),
            seed: 0,
            variant: Variant::Dual,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam("epochs and batch size must be >= 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.decay) || !(o.eps > 0.0) {
            return Err(Error::InvalidParam(format!("invalid RMSprop settings {o:?}")));
        }
        Ok(())
    }

    pub fn model_config(&self, input_size: usize) -> ModelConfig {
        let c = ModelConfig::for_variant(self.variant, input_size);
        match self.hidden {
            Some(h) => c.with_hidden(h),
            None => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: Option<f64>,
    pub val_acer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation model, at the precision it is stored with.
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Samples used for fitting and model selection. `held_out_users` are users
/// that must never reach the normalization fit (validation and test users).
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub train: Vec<&'a SampleTensor>,
    pub validation: Vec<&'a SampleTensor>,
    pub held_out_users: BTreeSet<String>,
    pub spec: HistogramSpec,
    pub frames: usize,
}

/// Fits normalization statistics, refusing samples of held-out users.
pub fn fit_training_stats(data: &TrainData<'_>) -> Result<NormStats> {
    if data.train.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    for s in &data.train {
        let p = s
            .provenance
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("training sample without provenance".into()))?;
        if data.held_out_users.contains(&p.user_id) {
            return Err(Error::Leakage(format!(
                "video {} of held-out user {} in the normalization fit",
                p.video_id, p.user_id
            )));
        }
    }
    let train_videos: BTreeSet<&str> = data
        .train
        .iter()
        .filter_map(|s| s.provenance.as_ref().map(|p| p.video_id.as_str()))
        .collect();
    for s in &data.validation {
        if let Some(p) = &s.provenance {
            if train_videos.contains(p.video_id.as_str()) {
                return Err(Error::Leakage(format!(
                    "video {} is in both training and validation",
                    p.video_id
                )));
            }
        }
    }
    fit_norm_stats_on_samples(data.train.iter().copied(), "training")
}

/// Training stopped on a non-finite loss or gradient.
#[derive(Debug)]
pub struct Diverged {
    pub epoch: usize,
    pub error: Error,
    pub last_good: Option<Box<TrainOutcome>>,
}

fn label_index(s: &SampleTensor) -> Result<usize> {
    match s.is_bonafide() {
        Some(true) => Ok(BONAFIDE),
        Some(false) => Ok(ATTACK),
        None => Err(Error::InvalidParam("sample without label".into())),
    }
}

fn validation_outcomes(ck: &Checkpoint, samples: &[&SampleTensor]) -> Result<Vec<EvalOutcome>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let scored = classify_batch(ck, chunk)?;
        for (s, (_, score)) in chunk.iter().zip(scored) {
            let p = s.provenance.as_ref().expect("validated");
            out.push(EvalOutcome::new(score, crate::metrics::DEFAULT_THRESHOLD, p.label, p.video_id.clone()));
        }
    }
    Ok(out)
}

fn better(candidate: (f64, f64), best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((bacc, acer)) => candidate.0 > bacc || (candidate.0 == bacc && candidate.1 < acer),
    }
}

/// Seeded mini-batch RMSprop training with per-epoch validation. The returned
/// checkpoint is the epoch with the best validation balanced accuracy (lower
/// ACER breaks ties); without validation data it is the last epoch.
pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> std::result::Result<TrainOutcome, Box<Diverged>> {
    let early = |error: Error| {
        Box::new(Diverged {
            epoch: 0,
            error,
            last_good: None,
        })
    };
    config.validate().map_err(early)?;
    let stats = fit_training_stats(data).map_err(early)?;
    let labels: Vec<usize> = data.train.iter().map(|s| label_index(s)).collect::<Result<_>>().map_err(early)?;
    for s in &data.validation {
        label_index(s).map_err(early)?;
    }
    let normalized: Vec<Array2<f64>> = data
        .train
        .iter()
        .map(|s| stats.normalize_rows(&s.frames))
        .collect::<Result<_>>()
        .map_err(early)?;
    let model_config = config.model_config(stats.dim());
    let mut model = Model::new(model_config, config.seed).map_err(early)?;
    let mut opt = RmspropState::new(config.optimizer, &model_config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4452_4f50);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<TrainOutcome> = None;
    let mut best_score: Option<(f64, f64)> = None;
    let mut order: Vec<usize> = (0..normalized.len()).collect();

    for epoch in 1..=config.epochs {
        let diverged = |error: Error, best: Option<TrainOutcome>| {
            Box::new(Diverged {
                epoch,
                error,
                last_good: best.map(Box::new),
            })
        };
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let views: Vec<ArrayView2<f64>> = batch.iter().map(|&i| normalized[i].view()).collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let step = model
                .forward(&views, Mode::Train, &mut dropout_rng)
                .and_then(|(out, cache)| {
                    let loss = model.loss(&out, &y);
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("training loss {loss}")));
                    }
                    let (grads, _) = model.backward(&cache, &y)?;
                    Ok((loss, grads))
                })
                .and_then(|(loss, grads)| {
                    rmsprop_step(&mut model.params, &grads, &mut opt)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss * batch.len() as f64,
                Err(e) => return Err(diverged(e, best)),
            }
        }
        let train_loss = loss_sum / normalized.len() as f64;

        let snapshot = Checkpoint {
            model: model.clone(),
            stats: stats.clone(),
            spec: data.spec,
            frames: data.frames,
            seed: config.seed,
        }
        .to_f32_precision();
        let (val_bacc, val_acer) = if data.validation.is_empty() {
            (None, None)
        } else {
            let outcomes = match validation_outcomes(&snapshot, &data.validation) {
                Ok(o) => o,
                Err(e) => return Err(diverged(e, best)),
            };
            (balanced_accuracy(&outcomes).ok(), acer(&outcomes))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_balanced_accuracy: val_bacc,
            val_acer,
        };
        info!(
            "epoch {epoch}: loss {train_loss:.5} val bal.acc {:?} val ACER {:?}",
            val_bacc, val_acer
        );
        history.push(record);

        let candidate = (val_bacc.unwrap_or(f64::NEG_INFINITY), val_acer.unwrap_or(f64::INFINITY));
        let keep = data.validation.is_empty() || better(candidate, best_score);
        if keep {
            debug!("epoch {epoch} is the new best");
            best_score = Some(candidate);
            best = Some(TrainOutcome {
                checkpoint: snapshot,
                best_epoch: epoch,
                history: Vec::new(),
            });
        }
    }
    let mut outcome = best.expect("at least one epoch");
    outcome.history = history;
    Ok(outcome)
}
