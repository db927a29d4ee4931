use alloc::format;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached in the last epoch, as a fraction of `lr`; the
    /// rate follows a half cosine between the two. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || self.epochs <= 1 {
            return self.lr;
        }
        let progress = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.lr * (f + (1.0 - f) * 0.5 * (1.0 + crate::math::cos(core::f64::consts::PI * progress)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of every epoch, in order.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Shuffled minibatch Adam over `len` items.
///
/// `loss_fn` receives the tape, the item indices of the batch, and the RNG for
/// any per-batch sampling. A non-finite batch loss aborts with the stage name
/// and the losses recorded so far.
pub fn train_epochs<R, F>(
    store: &mut ParamStore,
    len: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    stage: &str,
    mut loss_fn: F,
) -> Result<TrainReport>
where
    R: Rng + ?Sized,
    F: FnMut(&mut Tape<'_>, &[usize], &mut R) -> Result<Var>,
{
    let mut report = TrainReport::default();
    if len == 0 || cfg.epochs == 0 {
        return Ok(report);
    }
    let mut order: Vec<usize> = (0..len).collect();
    for epoch in 0..cfg.epochs {
        let adam = Adam::with_lr(cfg.epoch_lr(epoch));
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let grads = {
                let mut tape = Tape::new(store);
                let loss = loss_fn(&mut tape, chunk, rng)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    let tail = &report.epoch_losses[report.epoch_losses.len().saturating_sub(3)..];
                    return Err(Error::NonFinite(format!(
                        "{stage} loss in epoch {epoch} (recent epoch losses {tail:?})"
                    )));
                }
                total += value;
                tape.backward(loss)?
            };
            store.accumulate(&grads);
            adam.step(store);
            batches += 1;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    Ok(report)
}
