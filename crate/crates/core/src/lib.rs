//! Type-oriented generative named entity recognition.
//!
//! A sentence encoder scores how likely each entity type is to appear in a
//! sentence; the likely types are surfaced as a hint line in the prompt of a
//! text-to-text generator, which is fine-tuned with a generation loss plus a
//! multi-label type classification loss. This crate holds the data model,
//! prompt construction, output parsing, the losses, evaluation and the
//! workflow commands. Learned computation sits behind the traits in
//! [`backend`]; the bundled mocks make everything deterministic.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`). The aliases below
//! fix the scalar to `f64`, which the pipeline uses throughout.

pub mod backend;
pub mod codec;
pub mod error;
pub mod ingest;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod num;
pub mod objectives;
pub mod pipeline;
pub mod prompt;
pub mod training;
pub mod types;

pub use error::{Result, TonerError};
pub use num::Real;
pub use types::{AnnotatedExample, EntityMention, EntityType, TagSet, TypeSchema};

/// Scalar used by the pipeline.
pub type Scalar = f64;

pub type MatchScore64 = types::MatchScore<f64>;
pub type MatchScore32 = types::MatchScore<f32>;
pub type FilteredSchema64 = types::FilteredSchema<f64>;
pub type FilteredSchema32 = types::FilteredSchema<f32>;
pub type ClassifierLogits64 = types::ClassifierLogits<f64>;
pub type ClassifierLogits32 = types::ClassifierLogits<f32>;
pub type TokenLogProbs64 = types::TokenLogProbs<f64>;
pub type TokenLogProbs32 = types::TokenLogProbs<f32>;
pub type LossBreakdown64 = objectives::LossBreakdown<f64>;
pub type LossBreakdown32 = objectives::LossBreakdown<f32>;
pub type PooledEmbedding64 = matching::PooledEmbedding<f64>;
pub type CalibrationReport64 = matching::CalibrationReport<f64>;
pub type EvalReport64 = metrics::EvalReport<f64>;
pub type MockEncoder64 = backend::mock::MockEncoder<f64>;
pub type MockTrainableEncoder64 = backend::mock::MockTrainableEncoder<f64>;
pub type MockGenerator64 = backend::mock::MockGenerator<f64>;
