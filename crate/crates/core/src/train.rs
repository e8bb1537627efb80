//! Adam with L2 regularization, the epoch loop with checkpoint selection,
//! and the grid search over model sizes and learning rates.
//!
//! Users of one mini-batch are run on separate tapes in parallel; their
//! gradients are summed in user order so results do not depend on the
//! thread count.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::models::{EncodedUser, Model, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged in epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training user {0} has no label")]
    Unlabeled(String),
    #[error("no training users")]
    NoUsers,
    #[error("every trial failed: {0}")]
    AllTrialsFailed(String),
    #[error("user {user}: {source}")]
    Model { user: String, source: ModelError },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, l2: 1e-4, batch_size: 16, epochs: 15, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub l2: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, l2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Adam { lr, l2, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients. Parameters marked
    /// for decay see `g + l2·θ`. Nothing is changed if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TrainError> {
        for (_, p) in store.iter() {
            if !p.grad.is_finite() {
                return Err(TrainError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.decay { self.l2 } else { 0.0 };
            let grad = p.grad.data().to_vec();
            for (((theta, g), mi), vi) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + decay * *theta;
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Scores after one epoch. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training cross-entropy over the epoch (without the L2 term).
    pub loss: Option<f64>,
    pub tweet_accuracy: Option<f64>,
    pub user_accuracy: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// `trial<TAB>epoch<TAB>loss<TAB>tweet_acc<TAB>user_acc`, `-` for absent values.
pub fn metrics_line(trial: &str, m: &EpochMetrics) -> String {
    format!("{trial}\t{}\t{}\t{}\t{:.6}", m.epoch, opt(m.loss), opt(m.tweet_accuracy), m.user_accuracy)
}

/// Parameter values saved at the end of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub tweet_accuracy: Option<f64>,
    pub user_accuracy: f64,
    pub values: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Highest validation user accuracy, earliest epoch on ties.
    pub best_user: Snapshot,
    /// Highest validation tweet accuracy; only for the averaging variants.
    pub best_tweet: Option<Snapshot>,
}

fn snapshot(model: &Model, report: &EvalReport, epoch: usize) -> Snapshot {
    Snapshot {
        epoch,
        tweet_accuracy: report.tweet_accuracy,
        user_accuracy: report.user_accuracy,
        values: model.values(),
    }
}

/// Mean loss of one batch; gradients are left accumulated in the store.
fn train_batch(model: &mut Model, batch: &[&EncodedUser]) -> Result<f64, TrainError> {
    let results: Vec<Result<(f64, crate::autodiff::Gradients), TrainError>> = {
        let m: &Model = model;
        batch
            .par_iter()
            .map(|u| {
                let wrap = |source: ModelError| TrainError::Model { user: u.user_id.clone(), source };
                let label = u.label.ok_or_else(|| TrainError::Unlabeled(u.user_id.clone()))?;
                let mut tape = Tape::new(m.params());
                let (loss, _) = m.user_loss(&mut tape, &u.tweets, u.lsa.as_deref(), label.class()).map_err(wrap)?;
                let value = tape.value(loss).data()[0];
                let mut grads = tape.backward(loss).map_err(|e| wrap(e.into()))?;
                grads.discard_nodes();
                Ok((value, grads))
            })
            .collect()
    };
    let store = model.params_mut();
    store.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        grads.accumulate_into(store, scale);
    }
    Ok(total * scale)
}

/// Trains `model` in place and returns the per-epoch history together with
/// the two selected checkpoints. `on_epoch` sees every epoch as it finishes.
/// The model is left at its last-epoch values.
pub fn train(
    model: &mut Model,
    train_users: &[EncodedUser],
    val_users: &[EncodedUser],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_users.is_empty() {
        return Err(TrainError::NoUsers);
    }
    let mut adam = Adam::new(model.params(), config.lr, config.l2);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_users.len()).collect();

    let report = evaluate(model, val_users, "")?;
    let first = EpochMetrics { epoch: 0, loss: None, tweet_accuracy: report.tweet_accuracy, user_accuracy: report.user_accuracy };
    on_epoch(&first);
    let mut best_user = snapshot(model, &report, 0);
    let mut best_tweet = report.tweet_accuracy.map(|_| best_user.clone());
    let mut history = vec![first];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedUser> = chunk.iter().map(|&i| &train_users[i]).collect();
            let loss = train_batch(model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(model.params_mut())?;
        }
        let loss = loss_sum / train_users.len() as f64;
        let report = evaluate(model, val_users, "")?;
        let m = EpochMetrics { epoch, loss: Some(loss), tweet_accuracy: report.tweet_accuracy, user_accuracy: report.user_accuracy };
        log::debug!("epoch {epoch}: loss {loss:.5}, user accuracy {:.4}", report.user_accuracy);
        on_epoch(&m);
        if report.user_accuracy > best_user.user_accuracy {
            best_user = snapshot(model, &report, epoch);
        }
        if let (Some(acc), Some(best)) = (report.tweet_accuracy, &best_tweet) {
            if acc > best.tweet_accuracy.unwrap_or(f64::NEG_INFINITY) {
                best_tweet = Some(snapshot(model, &report, epoch));
            }
        }
        history.push(m);
    }
    Ok(TrainOutcome { history, best_user, best_tweet })
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} lr={}", self.model.variant, self.model.size_label(), self.train.lr)
    }
}

/// Every combination of `sizes` (d_cells or n_filters, by variant) and
/// learning rates, sizes varying slowest.
pub fn build_grid(model: &ModelConfig, train: &TrainConfig, sizes: &[usize], lrs: &[f64]) -> Vec<Trial> {
    let mut trials = Vec::with_capacity(sizes.len() * lrs.len());
    for &size in sizes {
        for &lr in lrs {
            let mut m = model.clone();
            if m.variant.uses_words() {
                m.d_cells = size;
            } else {
                m.n_filters = size;
            }
            let t = TrainConfig { lr, ..train.clone() };
            let id = format!("{}-{}-lr{}", m.variant, size, lr);
            trials.push(Trial { id, model: m, train: t });
        }
    }
    trials
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: Trial,
    pub outcome: TrainOutcome,
}

impl TrialResult {
    pub fn best_user_accuracy(&self) -> f64 {
        self.outcome.best_user.user_accuracy
    }
}

/// Runs every trial (in parallel) and sorts the successful ones by best
/// validation user accuracy, then smaller size, then grid order. Failed
/// trials are logged and dropped; an error is returned only if all fail.
pub fn grid_search<F>(trials: &[Trial], run: F) -> Result<Vec<TrialResult>, TrainError>
where
    F: Fn(&Trial) -> Result<TrainOutcome, TrainError> + Sync,
{
    if trials.is_empty() {
        return Err(TrainError::InvalidConfig("empty grid".into()));
    }
    let outcomes: Vec<Result<TrainOutcome, TrainError>> = trials.par_iter().map(&run).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, (trial, r)) in trials.iter().zip(outcomes).enumerate() {
        match r {
            Ok(outcome) => ok.push((i, TrialResult { trial: trial.clone(), outcome })),
            Err(e) => {
                log::warn!("trial {} failed: {e}", trial.id);
                failures.push(format!("{}: {e}", trial.id));
            }
        }
    }
    if ok.is_empty() {
        return Err(TrainError::AllTrialsFailed(failures.join("; ")));
    }
    ok.sort_by(|(ia, a), (ib, b)| {
        b.best_user_accuracy()
            .total_cmp(&a.best_user_accuracy())
            .then(a.trial.model.size().cmp(&b.trial.model.size()))
            .then(ia.cmp(ib))
    });
    Ok(ok.into_iter().map(|(_, r)| r).collect())
}
