//! Mini-batch SGD training with optional momentum.
//!
//! Epoch shuffling draws from one seeded ChaCha stream, batch membership is
//! determined by the shuffle, and each batch gradient is reduced in sample-id
//! order, so training is bitwise-deterministic for a given config and seeds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from, View};
use crate::error::{Error, Result};
use crate::nn::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 0.0 disables momentum (plain SGD).
    #[serde(default)]
    pub momentum: f64,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate = {} must be positive and finite",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "train.momentum = {} must lie in [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-epoch running statistics (measured on each batch before its update).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Trains in place; returns per-epoch history. Aborts with
/// [`Error::Diverged`] on a non-finite loss.
pub fn train(model: &mut Model, data: &View, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Degenerate("training on an empty view".into()));
    }
    let mut order: Vec<usize> = data.indices().to_vec();
    let mut rng = rng_from(cfg.shuffle_seed);
    let mut velocity = vec![0.0; model.param_count()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = data.len() as f64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let batch_view = View::subset(data.dataset(), batch.to_vec(), data.mode());
            let (grad, loss, acc) = model.loss_stats_gradient(&batch_view)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let blen = batch.len() as f64;
            epoch_loss += loss * blen;
            epoch_correct += acc * blen;
            if cfg.momentum > 0.0 {
                for (v, g) in velocity.iter_mut().zip(&grad) {
                    *v = cfg.momentum * *v + g;
                }
                for (p, v) in model.params.iter_mut().zip(&velocity) {
                    *p -= cfg.learning_rate * v;
                }
            } else {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
        }
        let loss = epoch_loss / n;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(EpochStats {
            epoch,
            loss,
            accuracy: epoch_correct / n,
        });
    }
    Ok(history)
}
