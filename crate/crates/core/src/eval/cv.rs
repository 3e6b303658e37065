//! Stratified k-fold grid search for the one-hot model families.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use crate::encoders::OneHotView;
use crate::error::{Error, Result};
use crate::models::linear::{LinearLoss, LinearModel};
use crate::models::stumps::{train_boosted_stumps, StumpConfig, StumpEnsemble};
use crate::models::train::{train, TrainConfig};
use crate::models::Differentiable;

/// One grid point for a one-hot model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OneHotSpec {
    Linear { loss: LinearLoss, l2: f64 },
    Stumps(StumpConfig),
}

impl OneHotSpec {
    pub fn describe(&self) -> String {
        match self {
            OneHotSpec::Linear { loss, l2 } => format!("linear loss={} l2={l2}", loss.as_str()),
            OneHotSpec::Stumps(c) => format!(
                "stumps rounds={} lr={} lambda={}",
                c.n_rounds, c.learning_rate, c.lambda
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedOneHot {
    Linear(LinearModel<f64>),
    Stumps(StumpEnsemble<f64>),
}

impl FittedOneHot {
    pub fn predict_proba_batch(&self, xs: &[OneHotView]) -> Result<Vec<f64>> {
        match self {
            FittedOneHot::Linear(m) => m.predict_proba_batch(xs),
            FittedOneHot::Stumps(m) => m.predict_proba_batch(xs),
        }
    }
}

/// Fits one grid point on all of `data`. Linear models run the full epoch
/// budget with no early stopping.
pub fn fit_onehot(spec: &OneHotSpec, data: &[OneHotView], cfg: &TrainConfig) -> Result<FittedOneHot> {
    let Some(first) = data.first() else {
        return Err(Error::Data("empty one-hot training set".into()));
    };
    match spec {
        OneHotSpec::Linear { loss, l2 } => {
            let m = LinearModel::<f64>::new(first.values.len(), *loss, *l2)?;
            Ok(FittedOneHot::Linear(train(m, data, None, cfg)?.model))
        }
        OneHotSpec::Stumps(c) => Ok(FittedOneHot::Stumps(train_boosted_stumps(data, c)?)),
    }
}

/// Fold index per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Data(format!("{} rows cannot fill {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in [1.0, 0.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = (offset + j) % k;
        }
        offset += idx.len();
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub spec: OneHotSpec,
    /// None for folds skipped because the held-out part had one class.
    pub fold_f1: Vec<Option<f64>>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_index: usize,
    pub table: Vec<CvRow>,
    /// Best grid point refit on all data.
    pub model: FittedOneHot,
}

impl CvResult {
    pub fn best(&self) -> &OneHotSpec {
        &self.table[self.best_index].spec
    }

    pub fn table_csv(&self) -> String {
        let k = self.table.first().map_or(0, |r| r.fold_f1.len());
        let mut out = String::from("config,mean_f1");
        for f in 0..k {
            out.push_str(&format!(",fold{}_f1", f + 1));
        }
        out.push('\n');
        for r in &self.table {
            out.push_str(&format!("\"{}\",{:.6}", r.spec.describe(), r.mean_f1));
            for f in &r.fold_f1 {
                out.push_str(&f.map(|v| format!(",{v:.6}")).unwrap_or_else(|| ",".into()));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean held-out F1 per grid point; the earliest grid point wins ties.
pub fn grid_search_cv(
    grid: &[OneHotSpec],
    data: &[OneHotView],
    folds: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let labels: Vec<f64> = data.iter().map(|x| x.label).collect();
    let fold = stratified_folds(&labels, folds, seed)?;
    let mut table = Vec::with_capacity(grid.len());
    for spec in grid {
        let mut fold_f1 = Vec::with_capacity(folds);
        for f in 0..folds {
            let (tr, te): (Vec<&OneHotView>, Vec<&OneHotView>) =
                data.iter().enumerate().fold((vec![], vec![]), |(mut a, mut b), (i, x)| {
                    if fold[i] == f {
                        b.push(x);
                    } else {
                        a.push(x);
                    }
                    (a, b)
                });
            let te_labels: Vec<f64> = te.iter().map(|x| x.label).collect();
            if te_labels.iter().all(|&y| y == te_labels[0]) {
                log::warn!("fold {} has a single class; skipped", f + 1);
                fold_f1.push(None);
                continue;
            }
            let tr: Vec<OneHotView> = tr.into_iter().cloned().collect();
            let te: Vec<OneHotView> = te.into_iter().cloned().collect();
            let model = fit_onehot(spec, &tr, cfg)?;
            let m = compute_metrics(&model.predict_proba_batch(&te)?, &te_labels, cfg.threshold)?;
            fold_f1.push(Some(m.f1));
        }
        let scored: Vec<f64> = fold_f1.iter().flatten().copied().collect();
        if scored.is_empty() {
            return Err(Error::Data("every cross-validation fold had a single class".into()));
        }
        table.push(CvRow {
            spec: spec.clone(),
            fold_f1,
            mean_f1: scored.iter().sum::<f64>() / scored.len() as f64,
        });
    }
    let mut best_index = 0;
    for (i, r) in table.iter().enumerate() {
        if r.mean_f1 > table[best_index].mean_f1 {
            best_index = i;
        }
    }
    let model = fit_onehot(&table[best_index].spec, data, cfg)?;
    Ok(CvResult {
        best_index,
        table,
        model,
    })
}
