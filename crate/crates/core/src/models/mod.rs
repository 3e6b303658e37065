//! Model families: linear baselines and boosted stumps over one-hot
//! vectors, a time-aware LSTM over visit sequences and a small transformer
//! encoder over subword ids.

pub mod gradcheck;
pub mod linear;
pub mod optim;
pub mod stumps;
pub mod tlstm;
pub mod train;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::encoders::{OneHotView, SequenceView};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Elapsed-time decay `1 / ln(e + dt)`.
pub fn g_decay<T: Scalar>(elapsed_days: T) -> T {
    T::one() / (T::of(std::f64::consts::E) + elapsed_days).ln()
}

pub fn g_decay_days(elapsed_days: i64) -> Result<f64> {
    if elapsed_days < 0 {
        return Err(Error::Usage(format!("elapsed days must be >= 0, got {elapsed_days}")));
    }
    Ok(g_decay(elapsed_days as f64))
}

/// A training example that carries its binary label.
pub trait Labeled {
    fn label(&self) -> f64;
}

impl Labeled for OneHotView {
    fn label(&self) -> f64 {
        self.label
    }
}

impl Labeled for SequenceView {
    fn label(&self) -> f64 {
        self.label
    }
}

/// Subword ids of one narrative, `[CLS]` first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedNarrative {
    pub patient_id: String,
    pub label: u8,
    pub ids: Vec<u32>,
}

impl Labeled for TokenizedNarrative {
    fn label(&self) -> f64 {
        f64::from(self.label)
    }
}

/// A model with a flat parameter vector and a hand-written gradient.
pub trait Differentiable<T: Scalar>: Clone {
    type Input: Labeled;

    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];

    fn logit(&self, x: &Self::Input) -> Result<T>;

    /// Adds `weight * d loss(x) / d params` to `grad` and returns `weight * loss(x)`.
    fn accumulate_grad(&self, x: &Self::Input, weight: T, grad: &mut [T]) -> Result<T>;

    /// Adds the regularizer gradient to `grad` and returns its value.
    fn regularize(&self, _grad: &mut [T]) -> T {
        T::zero()
    }

    /// Examples with equal keys are batched together when bucketing.
    fn batch_key(_x: &Self::Input) -> usize {
        0
    }

    fn predict_proba(&self, x: &Self::Input) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?).f64())
    }

    fn predict_proba_batch(&self, xs: &[Self::Input]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }
}

/// Binary cross-entropy on a logit and its derivative with respect to the logit.
pub fn bce_with_logit<T: Scalar>(z: T, y: T) -> (T, T) {
    let loss = crate::scalar::softplus(z) - y * z;
    (loss, sigmoid(z) - y)
}

pub(crate) fn uniform_init<T: Scalar>(rng: &mut impl rand::Rng, out: &mut [T], bound: f64) {
    for v in out {
        *v = T::of(rng.random_range(-bound..=bound));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_values() {
        assert_eq!(g_decay(0.0f64), 1.0);
        let e = std::f64::consts::E;
        assert!((g_decay(e * e - e) - 0.5f64).abs() < 1e-15);
        assert!(g_decay(30.0f64) < g_decay(1.0));
        assert!(g_decay_days(-1).is_err());
        assert_eq!(g_decay_days(0).unwrap(), 1.0);
    }

    #[test]
    fn bce_derivative() {
        let (l, d) = bce_with_logit(0.0f64, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d + 0.5).abs() < 1e-15);
    }
}
