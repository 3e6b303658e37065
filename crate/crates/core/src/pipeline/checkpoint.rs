use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelKind, Precision};
use crate::encoders::{FeatureSet, OneHotView, SequenceView};
use crate::error::{Error, Result};
use crate::eval::cv::FittedOneHot;
use crate::models::tlstm::TLstm;
use crate::models::transformer::Transformer;
use crate::models::{Differentiable, TokenizedNarrative};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum FittedModel {
    OneHot(FittedOneHot),
    Tlstm(TLstm<f64>),
    Tlstm32(TLstm<f32>),
    Transformer(Transformer<f64>),
    Transformer32(Transformer<f32>),
}

/// A fitted model with the metadata needed to check it against its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelKind,
    pub features: FeatureSet,
    pub precision: Precision,
    pub threshold: f64,
    /// Parameter block name to shape.
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub best_epoch: Option<usize>,
    pub body: FittedModel,
}

fn tlstm_shapes<T: Scalar>(m: &TLstm<T>) -> BTreeMap<String, Vec<usize>> {
    let c = &m.config;
    let (d, h, f) = (c.input_dim, c.hidden, c.fc);
    [
        ("w_x", vec![d, 4 * h]),
        ("u", vec![4 * h, h]),
        ("b", vec![4 * h]),
        ("w_d", vec![h, h]),
        ("b_d", vec![h]),
        ("w_fc", vec![f, h]),
        ("b_fc", vec![f]),
        ("w_out", vec![f]),
        ("b_out", vec![1]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn transformer_shapes<T: Scalar>(m: &Transformer<T>) -> BTreeMap<String, Vec<usize>> {
    let c = &m.config;
    let (d, ff) = (c.d_model, c.d_ff);
    let mut s: BTreeMap<String, Vec<usize>> = [
        ("token_embedding", vec![c.vocab_size, d]),
        ("position_embedding", vec![c.max_len, d]),
        ("embedding_norm", vec![2, d]),
        ("pooler", vec![d + 1, d]),
        ("classifier", vec![d + 1]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    for l in 0..c.n_layers {
        s.insert(format!("layer{l}.attention"), vec![4, d + 1, d]);
        s.insert(format!("layer{l}.ffn_in"), vec![ff, d + 1]);
        s.insert(format!("layer{l}.ffn_out"), vec![d, ff + 1]);
        s.insert(format!("layer{l}.norms"), vec![4, d]);
    }
    s
}

impl Checkpoint {
    pub fn new(model: ModelKind, features: FeatureSet, threshold: f64, best_epoch: Option<usize>, body: FittedModel) -> Self {
        let (precision, shapes) = match &body {
            FittedModel::OneHot(FittedOneHot::Linear(m)) => (
                Precision::F64,
                [("weights".to_string(), vec![m.dim]), ("bias".to_string(), vec![1])].into(),
            ),
            FittedModel::OneHot(FittedOneHot::Stumps(m)) => (
                Precision::F64,
                [("stumps".to_string(), vec![m.stumps.len(), 4]), ("input".to_string(), vec![m.dim])].into(),
            ),
            FittedModel::Tlstm(m) => (Precision::F64, tlstm_shapes(m)),
            FittedModel::Tlstm32(m) => (Precision::F32, tlstm_shapes(m)),
            FittedModel::Transformer(m) => (Precision::F64, transformer_shapes(m)),
            FittedModel::Transformer32(m) => (Precision::F32, transformer_shapes(m)),
        };
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model,
            features,
            precision,
            threshold,
            shapes,
            best_epoch,
            body,
        }
    }

    /// Checks the version and that parameter counts match the shapes.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format {} not supported (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let (have, want) = match &self.body {
            FittedModel::OneHot(_) => return Ok(()),
            FittedModel::Tlstm(m) => (m.params().len(), m.layout().len),
            FittedModel::Tlstm32(m) => (m.params().len(), m.layout().len),
            FittedModel::Transformer(m) => (m.params().len(), m.layout().len),
            FittedModel::Transformer32(m) => (m.params().len(), m.layout().len),
        };
        if have != want {
            return Err(Error::Structural(format!(
                "checkpoint has {have} parameters but its shapes need {want}"
            )));
        }
        Ok(())
    }

    fn mismatch(&self, view: &str) -> Error {
        Error::Usage(format!("{} checkpoint cannot score {view} inputs", self.model))
    }

    pub fn predict_onehot(&self, xs: &[OneHotView]) -> Result<Vec<f64>> {
        match &self.body {
            FittedModel::OneHot(m) => m.predict_proba_batch(xs),
            _ => Err(self.mismatch("one-hot")),
        }
    }

    pub fn predict_sequences(&self, xs: &[SequenceView]) -> Result<Vec<f64>> {
        match &self.body {
            FittedModel::Tlstm(m) => m.predict_proba_batch(xs),
            FittedModel::Tlstm32(m) => m.predict_proba_batch(xs),
            _ => Err(self.mismatch("sequence")),
        }
    }

    pub fn predict_tokens(&self, xs: &[TokenizedNarrative]) -> Result<Vec<f64>> {
        match &self.body {
            FittedModel::Transformer(m) => m.predict_proba_batch(xs),
            FittedModel::Transformer32(m) => m.predict_proba_batch(xs),
            _ => Err(self.mismatch("narrative")),
        }
    }
}
