//! Training objectives: generation NLL, multi-label type classification and
//! their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TonerError};
use crate::num::{log1p_sum_exp, Real};
use crate::types::{ClassifierLogits, TagSet, TokenLogProbs, TypeSchema};

/// Exponent signs used by [`classification_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `log(1 + Σ_P e^{p}) + log(1 + Σ_N e^{-p})`.
    #[default]
    Verbatim,
    /// `log(1 + Σ_P e^{-p}) + log(1 + Σ_N e^{p})`, the usual multi-label
    /// ranking form that rewards confident positives.
    Standard,
}

impl SignConvention {
    pub fn from_flag(standard_sign: bool) -> Self {
        if standard_sign {
            SignConvention::Standard
        } else {
            SignConvention::Verbatim
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct LossBreakdown<F> {
    pub generation: F,
    pub classification: F,
    pub lambda: F,
    pub total: F,
}

/// Summed (not averaged) negative log-likelihood of the target tokens.
pub fn generation_loss<F: Real>(logprobs: &TokenLogProbs<F>) -> Result<F> {
    let mut loss = F::zero();
    for &v in logprobs.values() {
        if !v.is_finite() || v > F::zero() {
            return Err(TonerError::invalid("token log-probs", format!("{v} is not a log-probability")));
        }
        loss = loss - v;
    }
    Ok(loss)
}

pub fn classification_loss<F: Real>(
    logits: &ClassifierLogits<F>,
    positive: &TagSet,
    negative: &TagSet,
    schema: &TypeSchema,
    sign: SignConvention,
) -> Result<F> {
    let p = logits.values();
    if p.len() != schema.len() {
        return Err(TonerError::DimensionMismatch {
            expected: schema.len(),
            actual: p.len(),
        });
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite()) {
        return Err(TonerError::invalid("logits", format!("non-finite value {v}")));
    }
    let indices = |set: &TagSet| -> Result<Vec<usize>> {
        set.iter()
            .map(|t| schema.index_of(t).ok_or_else(|| TonerError::unknown_tag(t)))
            .collect()
    };
    let (pos, neg) = (indices(positive)?, indices(negative)?);
    if let Some(i) = pos.iter().find(|i| neg.contains(i)) {
        return Err(TonerError::invalid(
            "type partition",
            format!("`{}` is both positive and negative", schema.types()[*i].tag()),
        ));
    }
    if pos.len() + neg.len() != schema.len() {
        return Err(TonerError::invalid("type partition", "does not cover the schema"));
    }
    let (pos_sign, neg_sign) = match sign {
        SignConvention::Verbatim => (F::one(), -F::one()),
        SignConvention::Standard => (-F::one(), F::one()),
    };
    let pos_term = log1p_sum_exp(pos.iter().map(|&i| pos_sign * p[i]));
    let neg_term = log1p_sum_exp(neg.iter().map(|&i| neg_sign * p[i]));
    Ok(pos_term + neg_term)
}

/// `total = generation + lambda * classification`.
pub fn combined_loss<F: Real>(generation: F, classification: F, lambda: F) -> Result<LossBreakdown<F>> {
    if !generation.is_finite() || !classification.is_finite() || !lambda.is_finite() {
        return Err(TonerError::invalid("loss", "non-finite input"));
    }
    if lambda < F::zero() {
        return Err(TonerError::invalid("lambda", format!("{lambda} is negative")));
    }
    Ok(LossBreakdown {
        generation,
        classification,
        lambda,
        total: generation + lambda * classification,
    })
}
