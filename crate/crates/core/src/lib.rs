//! Conversational recommendation over a knowledge graph: entity modeling
//! with neighbor substitution, two-stage dialogue augmentation,
//! dialogue-guided attention fusion and top-k retrieval.
//!
//! Numeric code is generic over [`num::Scalar`] (`f32` or `f64`). Training
//! uses `f64`; checkpoints store `f32`.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kg;
pub mod kgem;
pub mod model;
pub mod num;
pub mod trainer;

pub use error::{Error, Result};
pub use kg::{EntityId, Kg, KgIndex};

/// Parameters at training precision.
pub type Params = model::ModelParams<f64>;
/// Parameters at storage precision.
pub type StoredParams = model::ModelParams<f32>;
/// Inference model at training precision.
pub type Model = model::InferenceModel<f64>;
/// Gradients at training precision.
pub type Grads = model::Gradients<f64>;
