//! File-based experiment pipeline: one JSON configuration, one directory of
//! stage artifacts, and a run manifest that can replay every stage.

mod checkpoint;
mod manifest;
mod stages;
mod workspace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, FittedModel, CHECKPOINT_VERSION};
pub use manifest::{replay, sha256_hex, ReplayReport, RunManifest, StageRecord, MANIFEST_FILE};
pub use stages::{run_all, run_stage, Stage};
pub use workspace::Workspace;

use crate::density::DEFAULT_TOP_K;
use crate::encoders::FeatureSet;
use crate::error::{Error, Result};
use crate::eval::cv::OneHotSpec;
use crate::eval::study::DEFAULT_COMBOS;
use crate::explain::LimeConfig;
use crate::models::linear::LinearLoss;
use crate::models::stumps::StumpConfig;
use crate::models::train::TrainConfig;
use crate::subword::DEFAULT_MAX_LEN;
use crate::synth::GeneratorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Logistic regression on one-hot vectors.
    Logistic,
    /// Hinge-loss linear model on one-hot vectors.
    Svm,
    /// Boosted stumps on one-hot vectors.
    Stumps,
    Tlstm,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Logistic,
        ModelKind::Svm,
        ModelKind::Stumps,
        ModelKind::Tlstm,
        ModelKind::Transformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Svm => "svm",
            ModelKind::Stumps => "stumps",
            ModelKind::Tlstm => "tlstm",
            ModelKind::Transformer => "transformer",
        }
    }

    pub fn is_onehot(self) -> bool {
        matches!(self, ModelKind::Logistic | ModelKind::Svm | ModelKind::Stumps)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown model {s:?}")))
    }
}

/// Floating point type for the deep models. Gradient checks always use f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubwordSettings {
    /// Total vocabulary size, specials included.
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for SubwordSettings {
    fn default() -> Self {
        SubwordSettings {
            vocab_size: 2000,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneHotSettings {
    pub folds: usize,
    pub logistic_grid: Vec<f64>,
    pub svm_grid: Vec<f64>,
    pub stumps_grid: Vec<StumpConfig>,
    pub train: TrainConfig,
}

impl Default for OneHotSettings {
    fn default() -> Self {
        OneHotSettings {
            folds: 5,
            logistic_grid: vec![1e-4, 1e-3, 1e-2],
            svm_grid: vec![1e-4, 1e-3, 1e-2],
            stumps_grid: vec![
                StumpConfig {
                    n_rounds: 50,
                    ..Default::default()
                },
                StumpConfig::default(),
            ],
            train: TrainConfig {
                learning_rate: 1e-2,
                max_epochs: 10,
                patience: 0,
                bucket_by_length: false,
                ..Default::default()
            },
        }
    }
}

impl OneHotSettings {
    pub fn grid(&self, model: ModelKind) -> Result<Vec<OneHotSpec>> {
        let linear = |loss, grid: &[f64]| grid.iter().map(|&l2| OneHotSpec::Linear { loss, l2 }).collect();
        match model {
            ModelKind::Logistic => Ok(linear(LinearLoss::Logistic, &self.logistic_grid)),
            ModelKind::Svm => Ok(linear(LinearLoss::Hinge, &self.svm_grid)),
            ModelKind::Stumps => Ok(self.stumps_grid.iter().map(|c| OneHotSpec::Stumps(*c)).collect()),
            other => Err(Error::Usage(format!("{other} is not a one-hot model"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TLstmSettings {
    pub hidden: usize,
    pub fc: usize,
    pub train: TrainConfig,
}

impl Default for TLstmSettings {
    fn default() -> Self {
        TLstmSettings {
            hidden: 128,
            fc: 64,
            train: TrainConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub train: TrainConfig,
}

impl Default for TransformerSettings {
    fn default() -> Self {
        TransformerSettings {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            train: TrainConfig {
                learning_rate: 1e-4,
                bucket_by_length: false,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSettings {
    /// Number of test cases explained, highest transformer score first.
    pub n_patients: usize,
    pub lime: LimeConfig,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            n_patients: 5,
            lime: LimeConfig::default(),
        }
    }
}

/// Everything a run needs. Unknown keys are rejected; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the split, model initialisation, batching and explanations.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub gap_days: i64,
    /// Frequency filter: grouped codes need this many training patients.
    pub min_patients: usize,
    /// Feature set of the main results table.
    pub features: FeatureSet,
    /// Feature sets of the combination study.
    pub study_features: Vec<FeatureSet>,
    pub models: Vec<ModelKind>,
    pub precision: Precision,
    pub subword: SubwordSettings,
    pub density_top_k: usize,
    pub onehot: OneHotSettings,
    pub tlstm: TLstmSettings,
    pub transformer: TransformerSettings,
    pub explain: ExplainSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            generator: GeneratorConfig::default(),
            gap_days: crate::ehr::DEFAULT_GAP_DAYS,
            min_patients: 10,
            features: FeatureSet::ALL,
            study_features: DEFAULT_COMBOS.to_vec(),
            models: ModelKind::ALL.to_vec(),
            precision: Precision::F64,
            subword: SubwordSettings::default(),
            density_top_k: DEFAULT_TOP_K,
            onehot: OneHotSettings::default(),
            tlstm: TLstmSettings::default(),
            transformer: TransformerSettings::default(),
            explain: ExplainSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets both the pipeline seed and the generator seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.generator.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.gap_days < 0 {
            return Err(Error::Config(format!("gap_days must be >= 0, got {}", self.gap_days)));
        }
        if self.min_patients < 1 {
            return Err(Error::Config("min_patients must be >= 1".into()));
        }
        if self.density_top_k < 1 {
            return Err(Error::Config("density_top_k must be >= 1".into()));
        }
        if self.onehot.folds < 2 {
            return Err(Error::Config("onehot.folds must be >= 2".into()));
        }
        for m in [ModelKind::Logistic, ModelKind::Svm, ModelKind::Stumps] {
            if self.onehot.grid(m)?.is_empty() {
                return Err(Error::Config(format!("empty grid for {m}")));
            }
        }
        self.onehot.train.validate()?;
        self.tlstm.train.validate()?;
        self.transformer.train.validate()?;
        if self.tlstm.hidden == 0 || self.tlstm.fc == 0 {
            return Err(Error::Config("tlstm.hidden and tlstm.fc must be > 0".into()));
        }
        let t = &self.transformer;
        if t.n_heads == 0 || !t.d_model.is_multiple_of(t.n_heads) || t.n_layers == 0 || t.d_ff == 0 {
            return Err(Error::Config(format!(
                "transformer shape invalid: d_model {} heads {} layers {} d_ff {}",
                t.d_model, t.n_heads, t.n_layers, t.d_ff
            )));
        }
        if self.subword.max_len < 2 {
            return Err(Error::Config("subword.max_len must be >= 2".into()));
        }
        if self.explain.lime.n_samples < crate::explain::MIN_SAMPLES {
            return Err(Error::Config(format!(
                "explain.lime.n_samples must be >= {}",
                crate::explain::MIN_SAMPLES
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_defaults_fill_in() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = PipelineConfig::from_json(r#"{"seed": 3, "features": "diag"}"#).unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.features, FeatureSet::DIAG);
        assert_eq!(partial.min_patients, 10);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [r#"{"sed": 1}"#, r#"{"min_patients": 0}"#, r#"{"features": "xyz"}"#, "not json"] {
            let err = PipelineConfig::from_json(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }
}
