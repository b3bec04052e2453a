//! Adam with a periodic cosine learning-rate schedule and early stopping.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, Sample};
use crate::model::{loss_weights, Model, ModelError};
use crate::numerics::{ParamSet, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub cosine_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            batch_size: 32,
            max_epochs: 1000,
            patience: 40,
            cosine_period: 40,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.cosine_period == 0 {
            return bad("batch_size, max_epochs, patience and cosine_period must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// `½·lr0·(1 + cos(π·(epoch mod T)/T))` for a 0-based epoch index.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.cosine_period as f64;
    let phase = (epoch % cfg.cosine_period) as f64 / t;
    0.5 * cfg.lr0 * (1.0 + (std::f64::consts::PI * phase).cos())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(TrainError::NonFinite(name.clone()));
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let Some(g) = grads.get(name) else { continue };
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((theta, &gi), (mi, vi)) in it {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Tracks the best validation loss; stops after `patience` epochs without a
/// strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> Progress {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            Progress::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            Progress::Stop
        } else {
            Progress::Stalled
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// One finished epoch. `epoch` counts from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl std::fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} val_loss={:.6} lr={:.3e} seconds={:.3}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub skipped_batches: usize,
}

impl TrainReport {
    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        self.total_seconds() / self.epochs.len().max(1) as f64
    }
}

/// Worker count from `AIT_THREADS`, default 1.
pub fn worker_threads() -> usize {
    std::env::var("AIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs `f` on every item with up to `threads` workers, returning results
/// in input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Dataset-level loss: the mean over samples with at least one query of each
/// sample's nested per-variable MSE. Batches are reduced in a fixed order.
pub fn dataset_loss(model: &Model, samples: &[Sample], batch_size: usize, threads: usize) -> Result<f64, ModelError> {
    let batches = make_batches(samples, batch_size, None);
    let parts = parallel_map(&batches, threads, |b| batch_loss_sum(model, &model.params, b));
    let (mut total, mut count) = (0.0, 0usize);
    for part in parts {
        if let Some((sum, n)) = part? {
            total += sum;
            count += n;
        }
    }
    if count == 0 {
        return Err(ModelError::UndefinedLoss);
    }
    Ok(total / count as f64)
}

/// Batch loss times the number of contributing samples, or `None` for a
/// batch without queries.
fn batch_loss_sum(model: &Model, params: &ParamSet, batch: &Batch) -> Result<Option<(f64, usize)>, ModelError> {
    let Some((_, active)) = loss_weights(batch) else {
        return Ok(None);
    };
    let loss = model.loss_with(params, batch)?;
    Ok(Some((loss * active as f64, active)))
}

/// Trains from `model`'s current parameters and returns the parameters of
/// the epoch with the lowest validation loss.
pub fn fit(model: &Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<(Model, TrainReport), TrainError> {
    fit_with(model, train, val, cfg, |_| {})
}

/// As [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with<F>(
    model: &Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Model, TrainReport), TrainError>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("training and validation sets must be nonempty".into()));
    }
    let threads = worker_threads();
    let mut current = model.clone();
    let mut best = model.clone();
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut state = AdamState::default();
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = cosine_lr(epoch, cfg);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in make_batches(train, cfg.batch_size, Some((cfg.seed, epoch as u64))) {
            let Some((_, active)) = loss_weights(&batch) else {
                log::warn!("epoch {}: skipping a batch without queries", epoch + 1);
                skipped += 1;
                continue;
            };
            let (loss, grads) = current.loss_and_grad(&batch)?;
            adam_step(&mut current.params, &grads, &mut state, lr, cfg)?;
            total += loss * active as f64;
            count += active;
        }
        if count == 0 {
            return Err(TrainError::Config("every training batch lacks queries".into()));
        }
        let val_loss = dataset_loss(&current, val, cfg.batch_size, threads)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: total / count as f64,
            val_loss,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{record}");
        on_epoch(&record);
        records.push(record);
        match stopping.observe(val_loss) {
            Progress::Improved => best = current.clone(),
            Progress::Stalled => {}
            Progress::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    if !stopping.best.is_finite() {
        return Err(TrainError::NonFinite("validation loss".into()));
    }
    Ok((
        best,
        TrainReport {
            epochs: records,
            best_epoch: stopping.best_epoch,
            best_val_loss: stopping.best,
            stop_reason,
            skipped_batches: skipped,
        },
    ))
}
