//! # hfrisk
//!
//! A desk-scale laboratory for comparing three ways of feeding structured EHR
//! codes to a heart-failure risk model for cancer patients:
//!
//! - **one-hot**: grouped, frequency-filtered codes as a binary vector
//!   (linear and boosted-stump models),
//! - **sequence**: per-visit multi-hot vectors with elapsed days between
//!   visits (time-aware LSTM),
//! - **narrative**: code descriptions serialized into text and tokenized into
//!   subwords (a small transformer encoder).
//!
//! Cohorts come from a synthetic generator with planted signals, so the
//! qualitative orderings between encodings can be tested end to end.
//!
//! Models are generic over the floating point type ([`Scalar`]); the aliases
//! below pin the common instantiations.

pub mod density;
pub mod ehr;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod explain;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod subword;
pub mod synth;
pub mod terminology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LinearModel = models::linear::LinearModel<f64>;
pub type LinearModel32 = models::linear::LinearModel<f32>;
pub type StumpEnsemble = models::stumps::StumpEnsemble<f64>;
pub type TLstm = models::tlstm::TLstm<f64>;
pub type TLstm32 = models::tlstm::TLstm<f32>;
pub type Transformer = models::transformer::Transformer<f64>;
pub type Transformer32 = models::transformer::Transformer<f32>;
