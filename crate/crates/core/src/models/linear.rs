//! Logistic-regression and hinge-loss linear classifiers over one-hot vectors.

use serde::{Deserialize, Serialize};

use super::Differentiable;
use crate::encoders::OneHotView;
use crate::error::{Error, Result};
use crate::scalar::{softplus, sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinearLoss {
    Logistic,
    Hinge,
}

impl LinearLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            LinearLoss::Logistic => "logistic",
            LinearLoss::Hinge => "hinge",
        }
    }
}

/// Weights followed by the bias in one flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearModel<T: Scalar> {
    pub dim: usize,
    pub loss: LinearLoss,
    pub l2: f64,
    params: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(dim: usize, loss: LinearLoss, l2: f64) -> Result<Self> {
        if !(l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(LinearModel {
            dim,
            loss,
            l2,
            params: vec![T::zero(); dim + 1],
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.params[..self.dim]
    }

    pub fn bias(&self) -> T {
        self.params[self.dim]
    }

    pub fn score(&self, x: &[f64]) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::Usage(format!(
                "one-hot width {} does not match model width {}",
                x.len(),
                self.dim
            )));
        }
        let mut s = self.bias();
        for (w, &v) in self.weights().iter().zip(x) {
            if v != 0.0 {
                s += *w * T::of(v);
            }
        }
        Ok(s)
    }
}

impl<T: Scalar> Differentiable<T> for LinearModel<T> {
    type Input = OneHotView;

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn logit(&self, x: &OneHotView) -> Result<T> {
        self.score(&x.values)
    }

    fn accumulate_grad(&self, x: &OneHotView, weight: T, grad: &mut [T]) -> Result<T> {
        let s = self.score(&x.values)?;
        let y = T::of(x.label);
        let (loss, ds) = match self.loss {
            LinearLoss::Logistic => (softplus(s) - y * s, sigmoid(s) - y),
            LinearLoss::Hinge => {
                let sign = y + y - T::one();
                let margin = T::one() - sign * s;
                if margin > T::zero() {
                    (margin, -sign)
                } else {
                    (T::zero(), T::zero())
                }
            }
        };
        let ds = ds * weight;
        if ds != T::zero() {
            for (g, &v) in grad[..self.dim].iter_mut().zip(&x.values) {
                if v != 0.0 {
                    *g += ds * T::of(v);
                }
            }
            grad[self.dim] += ds;
        }
        Ok(loss * weight)
    }

    fn regularize(&self, grad: &mut [T]) -> T {
        if self.l2 == 0.0 {
            return T::zero();
        }
        let l2 = T::of(self.l2);
        let mut pen = T::zero();
        for (g, &w) in grad[..self.dim].iter_mut().zip(self.weights()) {
            *g += l2 * w;
            pen += w * w;
        }
        pen * l2 * T::of(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(values: Vec<f64>, label: f64) -> OneHotView {
        OneHotView {
            patient_id: String::new(),
            label,
            values,
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel::<f64>::new(3, LinearLoss::Logistic, 0.0).unwrap();
        assert_eq!(m.predict_proba(&view(vec![1.0, 0.0, 1.0], 1.0)).unwrap(), 0.5);
        assert!(m.predict_proba(&view(vec![1.0], 1.0)).is_err());
    }

    #[test]
    fn hinge_gradient_is_zero_beyond_margin() {
        let mut m = LinearModel::<f64>::new(1, LinearLoss::Hinge, 0.0).unwrap();
        m.params_mut()[0] = 2.0;
        let mut g = vec![0.0; 2];
        let l = m.accumulate_grad(&view(vec![1.0], 1.0), 1.0, &mut g).unwrap();
        assert_eq!((l, g.clone()), (0.0, vec![0.0, 0.0]));
        let l = m.accumulate_grad(&view(vec![1.0], 0.0), 1.0, &mut g).unwrap();
        assert_eq!(l, 3.0);
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn negative_l2_rejected() {
        assert!(LinearModel::<f32>::new(2, LinearLoss::Logistic, -1.0).is_err());
    }
}
