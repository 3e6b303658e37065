//! Mini-batch training with validation-F1 checkpoint selection and
//! patience-based early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, Optimizer, OptimizerKind};
use super::{Differentiable, Labeled};
use crate::error::{Error, Result};
use crate::eval::metrics::{compute_metrics, f1_optimal_threshold};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Loss weight of positive examples.
    pub class_weight: Option<f64>,
    pub grad_clip: Option<f64>,
    /// Pick the decision threshold maximizing validation F1 after training.
    pub tune_threshold: bool,
    /// Batch examples of equal length together (sequence models).
    pub bucket_by_length: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            max_epochs: 20,
            patience: 3,
            batch_size: 32,
            seed: 0,
            threshold: 0.5,
            class_weight: None,
            grad_clip: None,
            tune_threshold: false,
            bucket_by_length: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if let Some(w) = self.class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("class_weight must be > 0, got {w}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,val_f1,val_auc,val_precision,val_recall\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            opt(e.val_f1),
            opt(e.val_auc),
            opt(e.val_precision),
            opt(e.val_recall)
        ));
    }
    out
}

/// Tracks the best (F1, AUC) pair, compared lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(f64, f64)>,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch; returns whether it is the new best.
    pub fn update(&mut self, epoch: usize, f1: f64, auc: Option<f64>) -> bool {
        let key = (f1, auc.unwrap_or(0.0));
        let improved = match self.best {
            None => true,
            Some(b) => key.0 > b.0 || (key.0 == b.0 && key.1 > b.1),
        };
        if improved {
            self.best = Some(key);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the returned parameters.
    pub best_epoch: usize,
    pub threshold: f64,
    pub stopped_early: bool,
}

fn batches<T: Scalar, M: Differentiable<T>>(
    data: &[M::Input],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    if cfg.bucket_by_length {
        order.sort_by_key(|&i| M::batch_key(&data[i]));
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let key = M::batch_key(&data[order[start]]);
            let mut end = start;
            while end < order.len() && end - start < cfg.batch_size && M::batch_key(&data[order[end]]) == key {
                end += 1;
            }
            out.push(order[start..end].to_vec());
            start = end;
        }
        out.shuffle(rng);
        out
    } else {
        order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
    }
}

pub fn train<T: Scalar, M: Differentiable<T>>(
    mut model: M,
    train: &[M::Input],
    val: Option<&[M::Input]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val.is_some_and(<[_]>::is_empty) {
        return Err(Error::Data("empty validation set".into()));
    }
    let val_labels: Option<Vec<f64>> = val.map(|v| v.iter().map(Labeled::label).collect());
    let n_params = model.params().len();
    let mut opt = Optimizer::<T>::new(cfg.optimizer, cfg.learning_rate, n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pos_weight = T::of(cfg.class_weight.unwrap_or(1.0));
    let mut grad = vec![T::zero(); n_params];

    let mut log = Vec::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<M> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        for (bi, batch) in batches::<T, M>(train, cfg, &mut rng).into_iter().enumerate() {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let mut loss = T::zero();
            for &i in &batch {
                let x = &train[i];
                let w = if x.label() == 1.0 { pos_weight } else { T::one() };
                loss += model.accumulate_grad(x, w, &mut grad)?;
            }
            let inv = T::one() / T::of(batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= inv);
            let loss = (loss * inv + model.regularize(&mut grad)).f64();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    loss,
                });
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grad, c);
            }
            opt.step(model.params_mut(), &grad);
            total += loss * batch.len() as f64;
        }
        let mut entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_f1: None,
            val_auc: None,
            val_precision: None,
            val_recall: None,
        };
        if let (Some(v), Some(labels)) = (val, &val_labels) {
            let probs = model.predict_proba_batch(v)?;
            let m = compute_metrics(&probs, labels, cfg.threshold)?;
            entry.val_f1 = Some(m.f1);
            entry.val_auc = m.auc;
            entry.val_precision = Some(m.precision);
            entry.val_recall = Some(m.recall);
            if stopper.update(epoch, m.f1, m.auc) {
                best = Some(model.clone());
            }
        }
        log::debug!("epoch {epoch}: loss {:.5} val f1 {:?}", entry.train_loss, entry.val_f1);
        log.push(entry);
        if stopper.should_stop() {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (model, best_epoch) = match best {
        Some(m) => (m, stopper.best_epoch),
        None => (model, log.len()),
    };
    let threshold = match (val, &val_labels) {
        (Some(v), Some(labels)) if cfg.tune_threshold => f1_optimal_threshold(&model.predict_proba_batch(v)?, labels)?,
        _ => cfg.threshold,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        threshold,
        stopped_early,
    })
}
