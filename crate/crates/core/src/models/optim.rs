//! SGD and Adam over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub enum Optimizer<T: Scalar> {
    Sgd {
        lr: T,
    },
    Adam {
        lr: T,
        beta1: T,
        beta2: T,
        eps: T,
        m: Vec<T>,
        v: Vec<T>,
        t: i32,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: T::of(lr) },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: T::of(lr),
                beta1: T::of(0.9),
                beta2: T::of(0.999),
                eps: T::of(1e-8),
                m: vec![T::zero(); n_params],
                v: vec![T::zero(); n_params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * *g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = T::one() - beta1.powi(*t);
                let c2 = T::one() - beta2.powi(*t);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = *beta1 * m[i] + (T::one() - *beta1) * g;
                    v[i] = *beta2 * v[i] + (T::one() - *beta2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    params[i] -= *lr * mh / (vh.sqrt() + *eps);
                }
            }
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm<T: Scalar>(grad: &mut [T], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grad {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut o = Optimizer::<f64>::new(OptimizerKind::Sgd, 0.1, 2);
        let mut p = vec![1.0, 2.0];
        o.step(&mut p, &[1.0, -1.0]);
        assert_eq!(p, vec![0.9, 2.1]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut o = Optimizer::<f64>::new(OptimizerKind::Adam, 0.01, 1);
        let mut p = vec![0.0];
        o.step(&mut p, &[5.0]);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
