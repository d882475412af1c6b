//! Contracts for all learned computation.
//!
//! The type matcher's sentence encoder, the generator, and the generator's
//! classifier head all live behind these traits. Algorithms elsewhere in the
//! crate only see the traits, so they can be exercised with the deterministic
//! [`mock`] implementations.
//!
//! Training goes through `apply_update`: the caller hands over a closure that
//! evaluates the batch loss against a backend, and the backend performs one
//! optimization step that lowers it. A backend with autograd would
//! differentiate the closure's computation; the mocks use finite differences.

pub mod mock;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::num::Real;
use crate::types::{ClassifierLogits, TokenLogProbs};

/// Last-layer token states of an encoded text plus the attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText<F> {
    pub states: Vec<Vec<F>>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport<F> {
    pub loss_before: F,
    pub loss_after: F,
}

pub trait EncoderBackend<F: Real> {
    fn dim(&self) -> usize;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    /// Must return identical states for identical text between updates.
    fn encode(&self, text: &str) -> Result<EncodedText<F>>;
}

/// Batch loss as a function of the encoder's current parameters.
pub type EncoderObjective<'a, F> = dyn Fn(&dyn EncoderBackend<F>) -> Result<F> + 'a;

pub trait TrainableEncoder<F: Real>: EncoderBackend<F> {
    /// One optimization step on `objective`. Callers must not score with this
    /// instance concurrently.
    fn apply_update(&mut self, objective: &EncoderObjective<'_, F>) -> Result<UpdateReport<F>>;
}

/// Which part of the prompt feeds the pooled representation `h(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingScope {
    #[default]
    Full,
    SentenceOnly,
}

pub trait GeneratorBackend<F: Real> {
    /// Greedy decoding, at most `max_length` output tokens.
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String>;

    /// One log-probability per target token, all `<= 0`.
    fn teacher_forced_logprobs(&self, prompt: &str, target: &str) -> Result<TokenLogProbs<F>>;

    fn pooled_rep(&self, prompt: &str, scope: PoolingScope) -> Result<Vec<F>>;

    /// Classifier head applied to `pooled_rep`; one logit per schema type.
    fn type_logits(&self, prompt: &str, scope: PoolingScope) -> Result<ClassifierLogits<F>>;
}

pub type GeneratorObjective<'a, F> = dyn Fn(&dyn GeneratorBackend<F>) -> Result<F> + 'a;

pub trait TrainableGenerator<F: Real>: GeneratorBackend<F> {
    fn apply_update(&mut self, objective: &GeneratorObjective<'_, F>) -> Result<UpdateReport<F>>;
}
