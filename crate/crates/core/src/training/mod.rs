//! Dataset splitting and the optimization loop.

mod optim;
mod schedule;
mod split;

pub use optim::{clip_grad_norm, AdamW, AdamWParams};
pub use schedule::{lr_at, OneCycle};
pub use split::{split_dataset, DatasetSplit, DeviceSplit, SplitKind, SplitSpec, MIN_IMAGES_PER_DEVICE};

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::imaging::{augment, standardize_image, AugmentConfig, ChannelStats, SpectroImage};
use crate::vit::{backward, forward, loss_from_logits, VitModel};
use crate::{seed, Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub schedule: OneCycle,
    /// Apply `augmentation` to training batches.
    pub augment: bool,
    pub augmentation: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_epochs: 50,
            patience: 15,
            peak_lr: 1e-4,
            weight_decay: 0.05,
            clip_norm: 1.0,
            label_smoothing: 0.1,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            schedule: OneCycle::default(),
            augment: true,
            augmentation: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::validation("batch_size, max_epochs and patience must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::validation(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(Error::validation("peak_lr and clip_norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::validation("label_smoothing must lie in [0, 1)"));
        }
        self.adamw().validate()?;
        self.schedule.validate()?;
        self.augmentation.validate()
    }
}

/// A rendered image (values in [0, 1]) with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<T> {
    pub image: SpectroImage<T>,
    pub label: usize,
}

/// A standardized model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub input: Vec<T>,
    pub label: usize,
}

/// Rendered train/val/test images and the channel statistics fitted on the
/// training images.
#[derive(Debug, Clone)]
pub struct Datasets<T> {
    pub train: Vec<LabeledImage<T>>,
    pub val: Vec<LabeledImage<T>>,
    pub test: Vec<LabeledImage<T>>,
    pub channel_stats: ChannelStats<T>,
}

impl<T: Real> Datasets<T> {
    pub fn get(&self, kind: SplitKind) -> &[LabeledImage<T>] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    /// Standardized inputs without augmentation.
    pub fn examples(&self, kind: SplitKind) -> Vec<Example<T>> {
        standardize_all(self.get(kind), &self.channel_stats)
    }
}

pub fn standardize_all<T: Real>(images: &[LabeledImage<T>], stats: &ChannelStats<T>) -> Vec<Example<T>> {
    images
        .iter()
        .map(|l| Example {
            input: standardize_image(&l.image, stats),
            label: l.label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_loss,train_acc,val_loss,val_acc,lr")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.lr
            )?;
        }
        Ok(())
    }
}

/// Mean loss and accuracy (fraction) over `examples`, no updates.
pub fn epoch_metrics<T: Real>(model: &VitModel<T>, examples: &[Example<T>], alpha: f64) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::InsufficientData("cannot compute metrics on an empty set".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let p = forward(&ex.input, model)?;
        loss += loss_from_logits(&p.logits, ex.label, alpha)?.as_f64();
        correct += usize::from(p.predicted == ex.label);
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains with shuffled minibatches, clipping, AdamW and a one-cycle
/// schedule, stopping after `patience` epochs without a validation accuracy
/// improvement. Returns the parameters of the best epoch.
pub fn train<T: Real>(
    mut model: VitModel<T>,
    data: &Datasets<T>,
    cfg: &TrainConfig,
) -> Result<(VitModel<T>, TrainHistory)> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InsufficientData("train and val splits must be non-empty".into()));
    }
    let val = data.examples(SplitKind::Val);
    let n = data.train.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.max_epochs;
    let mut opt = AdamW::new(&model, cfg.adamw());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, VitModel<T>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seed::rng(seed::derive_seed(cfg.seed, "train.shuffle", epoch as u64)));
        let aug_seed = seed::derive_seed(cfg.seed, "train.augment", epoch as u64);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<T>> = chunk
                .iter()
                .map(|&i| {
                    let img = &data.train[i].image;
                    if cfg.augment {
                        let a = augment(img, &cfg.augmentation, seed::derive_seed(aug_seed, "sample", i as u64));
                        standardize_image(&a, &data.channel_stats)
                    } else {
                        standardize_image(img, &data.channel_stats)
                    }
                })
                .collect();
            let batch: Vec<(&[T], usize)> = inputs
                .iter()
                .zip(chunk)
                .map(|(x, &i)| (x.as_slice(), data.train[i].label))
                .collect();
            let mut g = backward(&model, &batch, cfg.label_smoothing)
                .map_err(|e| Error::numeric(format!("epoch {epoch} step {step}"), e.to_string()))?;
            if !g.loss.is_finite() {
                return Err(Error::numeric(format!("epoch {epoch} step {step}"), "non-finite loss"));
            }
            loss_sum += g.loss.as_f64() * chunk.len() as f64;
            correct += g.correct;
            clip_grad_norm(&mut g.grads, cfg.clip_norm);
            lr = cfg.schedule.lr_at(step, total_steps, cfg.peak_lr)?;
            opt.step(&mut model, &g.grads, lr);
            step += 1;
        }
        // Validation loss uses hard labels.
        let (val_loss, val_acc) = epoch_metrics(&model, &val, 0.0)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
            lr,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_acc > *acc) {
            best = Some((val_acc, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}
