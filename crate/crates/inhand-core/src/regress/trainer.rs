//! Shared mini-batch trainer for the neural regressors: Adam, early stopping
//! with best-parameter restore, seeded shuffling and a per-epoch history.

use super::RegressError;
use crate::seeding::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimizer and schedule parameters shared by FC-NN and LSTM training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { lr: 1e-3, batch: 256, max_epochs: 300, patience: 20, val_fraction: 0.1, seed: 0 }
    }
}

/// One line of training history. Epoch 0 is the pre-training validation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Decision after feeding one validation value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping; tracks the best epoch for restore.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, best_epoch: 0, bad: 0 }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn feed(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad = 0;
            StopDecision::Improved
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// A model trainable by [`train_loop`]: flat parameter access plus batch
/// loss/gradient over sample indices into its prepared data.
pub trait TrainableNet {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, p: &[f64]);
    /// Data MSE + L2 penalty and gradient over the given samples. Dropout is
    /// drawn from `dropout_rng` when present, disabled otherwise.
    fn loss_grad(&mut self, ids: &[usize], dropout_rng: Option<&mut ChaCha8Rng>) -> (f64, Vec<f64>);
    /// Pure data MSE (no dropout, no L2) over the given samples.
    fn data_loss(&self, ids: &[usize]) -> f64;
    fn n_samples(&self) -> usize;
}

/// Runs the shared training schedule; on return the model carries the
/// parameters of its best validation epoch.
pub fn train_loop<M: TrainableNet>(
    model: &mut M,
    params: &TrainParams,
) -> Result<Vec<EpochStats>, RegressError> {
    let n = model.n_samples();
    if n == 0 {
        return Err(RegressError::EmptyData);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "shuffle", 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "dropout", 0));
    order.shuffle(&mut shuffle_rng);
    let n_val = ((params.val_fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    let (val_ids, train_ids) = order.split_at(n_val);
    let val_ids: Vec<usize> = if val_ids.is_empty() { train_ids.to_vec() } else { val_ids.to_vec() };
    let mut train_ids: Vec<usize> = train_ids.to_vec();

    let batch = params.batch.max(1);
    let mut history = Vec::with_capacity(params.max_epochs + 1);
    let mut stopper = EarlyStopper::new(params.patience.max(1));
    let val0 = model.data_loss(&val_ids);
    history.push(EpochStats { epoch: 0, train_loss: None, val_loss: val0 });
    stopper.feed(0, val0);
    let mut best_params = model.flat_params();
    let mut adam = Adam::new(params.lr, best_params.len());

    for epoch in 1..=params.max_epochs {
        train_ids.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in train_ids.chunks(batch) {
            let (loss, grad) = model.loss_grad(chunk, Some(&mut dropout_rng));
            if !loss.is_finite() {
                return Err(RegressError::NonFiniteLoss { epoch });
            }
            let mut p = model.flat_params();
            adam.step(&mut p, &grad);
            model.set_flat_params(&p);
            epoch_loss += loss;
            batches += 1.0;
        }
        let val = model.data_loss(&val_ids);
        history.push(EpochStats { epoch, train_loss: Some(epoch_loss / batches), val_loss: val });
        match stopper.feed(epoch, val) {
            StopDecision::Improved => best_params = model.flat_params(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.set_flat_params(&best_params);
    Ok(history)
}
