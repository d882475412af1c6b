//! Entity type matching: mean-pooled embeddings, cosine sentence/type
//! scores, the contrastive matching loss, threshold filtering of the schema
//! and threshold calibration.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{EncoderBackend, TrainableEncoder};
use crate::error::{Result, TonerError};
use crate::metrics::{micro_prf, Counts};
use crate::num::{log_sum_exp, Real};
use crate::types::{FilteredSchema, MatchScore, TagSet, TypeSchema};

pub const HISTOGRAM_BINS: usize = 50;

/// Mean-pooled text representation. Never all-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct PooledEmbedding<F> {
    vector: Vec<F>,
    source_text: String,
}

impl<F: Real> PooledEmbedding<F> {
    pub fn new(vector: Vec<F>, source_text: impl Into<String>) -> Result<Self> {
        if vector.is_empty() {
            return Err(TonerError::Degenerate("empty embedding".into()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(TonerError::invalid("embedding", "non-finite component"));
        }
        if vector.iter().all(|x| *x == F::zero()) {
            return Err(TonerError::Degenerate("zero embedding has no direction".into()));
        }
        Ok(PooledEmbedding {
            vector,
            source_text: source_text.into(),
        })
    }

    pub fn vector(&self) -> &[F] {
        &self.vector
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Arithmetic mean of the unmasked token states.
pub fn pool_embedding<F: Real>(states: &[Vec<F>], mask: &[bool]) -> Result<PooledEmbedding<F>> {
    if states.len() != mask.len() {
        return Err(TonerError::DimensionMismatch {
            expected: states.len(),
            actual: mask.len(),
        });
    }
    let mut kept = states.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| s);
    let first = kept
        .next()
        .ok_or_else(|| TonerError::Degenerate("every token is masked".into()))?;
    let mut sum = first.clone();
    let mut count = 1usize;
    for s in kept {
        if s.len() != sum.len() {
            return Err(TonerError::DimensionMismatch {
                expected: sum.len(),
                actual: s.len(),
            });
        }
        for (acc, &x) in sum.iter_mut().zip(s) {
            *acc = *acc + x;
        }
        count += 1;
    }
    let n = F::lit(count as f64);
    PooledEmbedding::new(sum.into_iter().map(|x| x / n).collect(), String::new())
}

pub fn embed_text<F: Real>(encoder: &dyn EncoderBackend<F>, text: &str) -> Result<PooledEmbedding<F>> {
    let encoded = encoder.encode(text)?;
    let pooled = pool_embedding(&encoded.states, &encoded.mask)?;
    Ok(PooledEmbedding {
        source_text: text.to_owned(),
        ..pooled
    })
}

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn match_score<F: Real>(a: &PooledEmbedding<F>, b: &PooledEmbedding<F>) -> Result<F> {
    if a.dim() != b.dim() {
        return Err(TonerError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let dot: F = a.vector.iter().zip(&b.vector).map(|(&x, &y)| x * y).sum();
    let na = a.vector.iter().map(|&x| x * x).sum::<F>().sqrt();
    let nb = b.vector.iter().map(|&x| x * x).sum::<F>().sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(TonerError::Degenerate("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).max(-F::one()).min(F::one()))
}

/// Scores every schema type against `sentence`, in schema order.
pub fn score_types<F: Real>(
    encoder: &dyn EncoderBackend<F>,
    sentence: &str,
    schema: &TypeSchema,
) -> Result<Vec<MatchScore<F>>> {
    let x = embed_text(encoder, sentence)?;
    schema
        .iter()
        .map(|t| {
            let d = embed_text(encoder, t.description())?;
            Ok(MatchScore {
                type_tag: t.tag().to_owned(),
                score: match_score(&x, &d)?,
            })
        })
        .collect()
}

/// [`score_types`] with description embeddings cached by description text.
/// The cache must be cleared whenever the encoder is updated.
#[derive(Debug, Default)]
pub struct TypeScorer<F> {
    descriptions: HashMap<String, PooledEmbedding<F>>,
}

impl<F: Real> TypeScorer<F> {
    pub fn new() -> Self {
        TypeScorer {
            descriptions: HashMap::new(),
        }
    }

    pub fn clear(&mut self) {
        self.descriptions.clear();
    }

    pub fn cached(&self) -> usize {
        self.descriptions.len()
    }

    pub fn score(
        &mut self,
        encoder: &dyn EncoderBackend<F>,
        sentence: &str,
        schema: &TypeSchema,
    ) -> Result<Vec<MatchScore<F>>> {
        let x = embed_text(encoder, sentence)?;
        let mut out = Vec::with_capacity(schema.len());
        for t in schema.iter() {
            if !self.descriptions.contains_key(t.description()) {
                let d = embed_text(encoder, t.description())?;
                self.descriptions.insert(t.description().to_owned(), d);
            }
            out.push(MatchScore {
                type_tag: t.tag().to_owned(),
                score: match_score(&x, &self.descriptions[t.description()])?,
            });
        }
        Ok(out)
    }
}

/// Contrastive loss over the temperature-scaled softmax of the type scores:
/// `-Σ_{t⁺ ∈ P} log softmax(s/τ)_{t⁺}` with the softmax taken over `P ∪ N`.
///
/// Other positives stay in the denominator. An empty `P` gives zero.
pub fn matching_loss<F: Real>(scores: &[MatchScore<F>], positive: &TagSet, negative: &TagSet, tau: F) -> Result<F> {
    if !(tau > F::zero()) {
        return Err(TonerError::invalid("temperature", format!("{tau} is not positive")));
    }
    if positive.is_empty() && negative.is_empty() {
        return Err(TonerError::invalid("matching loss", "empty type universe"));
    }
    if positive.is_empty() {
        return Ok(F::zero());
    }
    let lookup: HashMap<&str, F> = scores.iter().map(|s| (s.type_tag.as_str(), s.score)).collect();
    let scaled = |tag: &String| -> Result<F> {
        lookup
            .get(tag.as_str())
            .map(|&s| s / tau)
            .ok_or_else(|| TonerError::invalid("matching loss", format!("no score for type `{tag}`")))
    };
    let logits = positive
        .iter()
        .chain(negative.iter())
        .map(scaled)
        .collect::<Result<Vec<F>>>()?;
    let normalizer = log_sum_exp(&logits);
    Ok(logits[..positive.len()]
        .iter()
        .map(|&z| normalizer - z)
        .fold(F::zero(), |acc, x| acc + x))
}

/// Keeps the types scoring strictly above `threshold`, best first (ties in
/// schema order).
pub fn filter_schema<F: Real>(scores: &[MatchScore<F>], threshold: F, schema: &TypeSchema) -> FilteredSchema<F> {
    let mut kept: Vec<&MatchScore<F>> = scores.iter().filter(|s| s.score > threshold).collect();
    kept.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let ia = schema.index_of(&a.type_tag).unwrap_or(usize::MAX);
                let ib = schema.index_of(&b.type_tag).unwrap_or(usize::MAX);
                ia.cmp(&ib)
            })
    });
    FilteredSchema {
        retained: kept.into_iter().map(|s| s.type_tag.clone()).collect(),
        threshold,
        scores: scores.to_vec(),
    }
}

/// One sentence's type partition, used for matcher training and calibration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchingPair {
    pub id: String,
    pub sentence: String,
    pub positive: TagSet,
    pub negative: TagSet,
    /// No gold types: zero matching loss, skipped by training.
    pub no_positive: bool,
}

/// Scores of one sentence with its gold positive types.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair<F> {
    pub scores: Vec<MatchScore<F>>,
    pub positive: TagSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ThresholdMetrics<F> {
    pub delta: F,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub retained_mean: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ScoreHistogram<F> {
    pub bin_edges: Vec<F>,
    pub positive_counts: Vec<u64>,
    pub negative_counts: Vec<u64>,
}

impl<F: Real> ScoreHistogram<F> {
    /// `HISTOGRAM_BINS` uniform bins over `[-1, 1]`; the last bin is closed.
    pub fn build(pairs: &[ScoredPair<F>]) -> Self {
        let bin_edges = (0..=HISTOGRAM_BINS)
            .map(|i| F::lit(2.0 * i as f64 / HISTOGRAM_BINS as f64 - 1.0))
            .collect();
        let mut positive_counts = vec![0; HISTOGRAM_BINS];
        let mut negative_counts = vec![0; HISTOGRAM_BINS];
        for pair in pairs {
            for s in &pair.scores {
                let bin = histogram_bin(s.score);
                if pair.positive.contains(&s.type_tag) {
                    positive_counts[bin] += 1;
                } else {
                    negative_counts[bin] += 1;
                }
            }
        }
        ScoreHistogram {
            bin_edges,
            positive_counts,
            negative_counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.positive_counts.iter().chain(&self.negative_counts).sum()
    }
}

fn histogram_bin<F: Real>(score: F) -> usize {
    let x = (score.to_f64_lossy() + 1.0) / 2.0 * HISTOGRAM_BINS as f64;
    if x.is_nan() || x < 0.0 {
        0
    } else {
        (x as usize).min(HISTOGRAM_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct CalibrationReport<F> {
    pub grid: Vec<F>,
    pub rows: Vec<ThresholdMetrics<F>>,
    pub chosen: F,
    pub pair_count: u64,
    pub histogram: ScoreHistogram<F>,
}

impl<F: Real> CalibrationReport<F> {
    pub fn chosen_metrics(&self) -> &ThresholdMetrics<F> {
        self.rows
            .iter()
            .find(|r| r.delta == self.chosen)
            .expect("chosen threshold comes from the grid")
    }
}

/// Filter quality at one threshold, treating retained types as predicted
/// positives and gold types as actual positives over all (sentence, type)
/// pairs.
pub fn threshold_metrics<F: Real>(pairs: &[ScoredPair<F>], delta: F) -> ThresholdMetrics<F> {
    let mut counts = Counts::default();
    let mut retained_total = 0usize;
    for pair in pairs {
        for s in &pair.scores {
            let predicted = s.score > delta;
            let gold = pair.positive.contains(&s.type_tag);
            retained_total += usize::from(predicted);
            match (predicted, gold) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let prf = micro_prf::<F>(&counts);
    let retained_mean = if pairs.is_empty() {
        F::zero()
    } else {
        F::lit(retained_total as f64) / F::lit(pairs.len() as f64)
    };
    ThresholdMetrics {
        delta,
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        retained_mean,
    }
}

/// Picks the grid threshold with the best filter F1; ties go to the smaller
/// threshold.
pub fn calibrate_from_scores<F: Real>(pairs: &[ScoredPair<F>], grid: &[F]) -> Result<CalibrationReport<F>> {
    if grid.is_empty() {
        return Err(TonerError::invalid("calibration grid", "empty"));
    }
    if pairs.is_empty() {
        return Err(TonerError::invalid("calibration", "no dev pairs"));
    }
    let rows: Vec<ThresholdMetrics<F>> = grid.iter().map(|&d| threshold_metrics(pairs, d)).collect();
    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.f1 > best.f1 || (row.f1 == best.f1 && row.delta < best.delta) {
            best = row;
        }
    }
    let chosen = best.delta;
    Ok(CalibrationReport {
        grid: grid.to_vec(),
        chosen,
        pair_count: pairs.iter().map(|p| p.scores.len() as u64).sum(),
        histogram: ScoreHistogram::build(pairs),
        rows,
    })
}

pub fn calibrate_threshold<F: Real>(
    dev_pairs: &[MatchingPair],
    encoder: &dyn EncoderBackend<F>,
    schema: &TypeSchema,
    grid: &[F],
) -> Result<CalibrationReport<F>> {
    let mut scorer = TypeScorer::new();
    let scored = dev_pairs
        .iter()
        .map(|p| {
            Ok(ScoredPair {
                scores: scorer.score(encoder, &p.sentence, schema)?,
                positive: p.positive.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    calibrate_from_scores(&scored, grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherTraining<F> {
    pub tau: F,
    pub epochs: usize,
    pub batch_size: usize,
    /// Reshuffle each epoch when set; otherwise keep input order.
    pub shuffle_seed: Option<u64>,
}

/// Mean matching loss over `pairs`, scored with `encoder`.
pub fn mean_matching_loss<F: Real>(
    encoder: &dyn EncoderBackend<F>,
    pairs: &[&MatchingPair],
    schema: &TypeSchema,
    tau: F,
) -> Result<F> {
    if pairs.is_empty() {
        return Ok(F::zero());
    }
    let mut scorer = TypeScorer::new();
    let mut total = F::zero();
    for p in pairs {
        let scores = scorer.score(encoder, &p.sentence, schema)?;
        total = total + matching_loss(&scores, &p.positive, &p.negative, tau)?;
    }
    Ok(total / F::lit(pairs.len() as f64))
}

/// Runs the matcher training loop and returns the mean loss of each epoch,
/// measured before each batch's update. Sentences without gold types are
/// skipped.
pub fn train_matcher<F: Real, E: TrainableEncoder<F>>(
    encoder: &mut E,
    pairs: &[MatchingPair],
    schema: &TypeSchema,
    params: &MatcherTraining<F>,
) -> Result<Vec<F>> {
    if params.batch_size == 0 {
        return Err(TonerError::invalid("batch size", "must be positive"));
    }
    let mut order: Vec<&MatchingPair> = pairs.iter().filter(|p| !p.no_positive).collect();
    let mut trace = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        if let Some(seed) = params.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
            order.shuffle(&mut rng);
        }
        let mut sum = F::zero();
        for batch in order.chunks(params.batch_size) {
            let objective = |enc: &dyn EncoderBackend<F>| mean_matching_loss(enc, batch, schema, params.tau);
            let report = encoder.apply_update(&objective)?;
            sum = sum + report.loss_before * F::lit(batch.len() as f64);
        }
        trace.push(if order.is_empty() {
            F::zero()
        } else {
            sum / F::lit(order.len() as f64)
        });
    }
    Ok(trace)
}
