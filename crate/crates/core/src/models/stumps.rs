//! Newton-boosted depth-1 trees on the logistic loss.

use serde::{Deserialize, Serialize};

use crate::encoders::OneHotView;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StumpConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    /// Leaf-value regularizer.
    pub lambda: f64,
}

impl Default for StumpConfig {
    fn default() -> Self {
        StumpConfig {
            n_rounds: 100,
            learning_rate: 0.3,
            lambda: 1.0,
        }
    }
}

/// `x[feature] < threshold` goes left. Leaf values include the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Stump<T: Scalar> {
    pub feature: usize,
    pub threshold: f64,
    pub left: T,
    pub right: T,
}

impl<T: Scalar> Stump<T> {
    pub fn output(&self, x: &[f64]) -> T {
        if x[self.feature] < self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StumpEnsemble<T: Scalar> {
    pub dim: usize,
    pub base: T,
    pub stumps: Vec<Stump<T>>,
    pub learning_rate: f64,
    pub n_rounds: usize,
}

impl<T: Scalar> StumpEnsemble<T> {
    pub fn score(&self, x: &[f64]) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::Usage(format!(
                "one-hot width {} does not match model width {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.stumps.iter().fold(self.base, |s, st| s + st.output(x)))
    }

    pub fn predict_proba(&self, x: &OneHotView) -> Result<f64> {
        Ok(sigmoid(self.score(&x.values)?).f64())
    }

    pub fn predict_proba_batch(&self, xs: &[OneHotView]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict_proba(x)).collect()
    }

    pub fn is_bias_only(&self) -> bool {
        self.stumps.is_empty()
    }
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

fn leaf(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Fits stumps on gradient/hessian statistics. Stops early when no split has
/// positive gain.
pub fn train_boosted_stumps<T: Scalar>(data: &[OneHotView], cfg: &StumpConfig) -> Result<StumpEnsemble<T>> {
    if cfg.n_rounds < 1 {
        return Err(Error::Config("n_rounds must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.lambda > 0.0) {
        return Err(Error::Config("learning_rate and lambda must be > 0".into()));
    }
    let Some(first) = data.first() else {
        return Err(Error::Data("cannot fit stumps on an empty training set".into()));
    };
    let dim = first.values.len();
    if data.iter().any(|x| x.values.len() != dim) {
        return Err(Error::Structural("one-hot rows differ in width".into()));
    }
    let n = data.len();
    let y: Vec<f64> = data.iter().map(|x| x.label).collect();
    let mean = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base = (mean / (1.0 - mean)).ln();
    let mut ens = StumpEnsemble {
        dim,
        base: T::of(base),
        stumps: Vec::new(),
        learning_rate: cfg.learning_rate,
        n_rounds: cfg.n_rounds,
    };
    if y.iter().all(|&v| v == y[0]) {
        return Ok(ens);
    }

    // per feature: row order by value, and distinct value boundaries
    let orders: Vec<Vec<usize>> = (0..dim)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| data[a].values[f].total_cmp(&data[b].values[f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut score = vec![base; n];
    let (mut g, mut h) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            let p = sigmoid(score[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        let gt: f64 = g.iter().sum();
        let ht: f64 = h.iter().sum();
        let parent = leaf(gt, ht, cfg.lambda);
        let mut best: Option<Split> = None;
        for (f, order) in orders.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = order[k];
                gl += g[i];
                hl += h[i];
                let v = data[i].values[f];
                let next = data[order[k + 1]].values[f];
                if next == v {
                    continue;
                }
                let (gr, hr) = (gt - gl, ht - hl);
                let gain = leaf(gl, hl, cfg.lambda) + leaf(gr, hr, cfg.lambda) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        gain,
                        feature: f,
                        threshold: 0.5 * (v + next),
                        left: -gl / (hl + cfg.lambda),
                        right: -gr / (hr + cfg.lambda),
                    });
                }
            }
        }
        let Some(s) = best else { break };
        let stump = Stump {
            feature: s.feature,
            threshold: s.threshold,
            left: T::of(cfg.learning_rate * s.left),
            right: T::of(cfg.learning_rate * s.right),
        };
        for (i, sc) in score.iter_mut().enumerate() {
            *sc += stump.output(&data[i].values).f64();
        }
        ens.stumps.push(stump);
    }
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: Vec<f64>, label: f64) -> OneHotView {
        OneHotView {
            patient_id: String::new(),
            label,
            values,
        }
    }

    #[test]
    fn constant_labels_give_bias_only() {
        let d = vec![row(vec![0.0, 1.0], 1.0), row(vec![1.0, 0.0], 1.0)];
        let m: StumpEnsemble<f64> = train_boosted_stumps(&d, &StumpConfig::default()).unwrap();
        assert!(m.is_bias_only());
    }

    #[test]
    fn identical_rows_give_bias_only() {
        let d = vec![row(vec![1.0, 0.0], 1.0), row(vec![1.0, 0.0], 0.0), row(vec![1.0, 0.0], 0.0)];
        let m: StumpEnsemble<f64> = train_boosted_stumps(&d, &StumpConfig::default()).unwrap();
        assert!(m.is_bias_only());
        assert!((sigmoid(m.base) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn score_is_base_plus_stumps() {
        let d: Vec<OneHotView> = (0..20)
            .map(|i| row(vec![(i % 2) as f64, (i % 3 == 0) as u8 as f64], ((i % 2 == 1) || i % 7 == 0) as u8 as f64))
            .collect();
        let m: StumpEnsemble<f64> = train_boosted_stumps(&d, &StumpConfig { n_rounds: 5, ..Default::default() }).unwrap();
        for x in &d {
            let manual = m.base + m.stumps.iter().map(|s| s.output(&x.values)).sum::<f64>();
            assert!((m.score(&x.values).unwrap() - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rounds_rejected() {
        let d = vec![row(vec![0.0], 1.0)];
        assert!(train_boosted_stumps::<f64>(&d, &StumpConfig { n_rounds: 0, ..Default::default() }).is_err());
    }
}
