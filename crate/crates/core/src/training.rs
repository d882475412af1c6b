//! Joint fine-tuning loop: teacher-forced generation loss plus the weighted
//! type classification loss, one backend update per batch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{GeneratorBackend, PoolingScope, TrainableGenerator};
use crate::codec::{parse_exp, parse_mentions};
use crate::error::{Result, TonerError};
use crate::num::Real;
use crate::objectives::{classification_loss, combined_loss, generation_loss, LossBreakdown, SignConvention};
use crate::prompt::{PromptSample, TaskKind};
use crate::types::{derive_type_sets, TagSet, TypeSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Shuffle all samples together, then cut batches.
    #[default]
    Mixed,
    /// Batches never mix task kinds; batch order is shuffled.
    Homogeneous,
}

/// How per-sample losses are combined within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTraining<F> {
    pub lambda: F,
    pub sign: SignConvention,
    pub scope: PoolingScope,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reduction: BatchReduction,
    pub batch_mode: BatchMode,
    /// Also apply the classification loss to type-recognition samples.
    pub cls_on_type_recognition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct StepRecord<F> {
    pub step: usize,
    pub generation: F,
    pub classification: F,
    pub total: F,
}

/// Steps completed so far, plus the error that stopped training, if any.
#[derive(Debug)]
pub struct TrainOutcome<F> {
    pub steps: Vec<StepRecord<F>>,
    pub error: Option<TonerError>,
}

impl<F: Real> TrainOutcome<F> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,generation,classification,total\n");
        for r in &self.steps {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.generation, r.classification, r.total));
        }
        out
    }
}

/// A sample with its gold type partition resolved, when the classification
/// loss applies to it.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample: PromptSample,
    pub partition: Option<(TagSet, TagSet)>,
}

/// Reads the gold type list of a type-recognition target such as
/// `[location, person]`.
pub fn parse_type_list(target: &str, schema: &TypeSchema) -> Result<TagSet> {
    let inner = target
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| TonerError::invalid("type list", format!("{target:?} is not bracketed")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| {
            schema
                .by_display_name(n)
                .map(|t| t.tag().to_owned())
                .ok_or_else(|| TonerError::invalid("type list", format!("unknown type name `{n}`")))
        })
        .collect()
}

/// Resolves `(P_x, N_x)` from a sample's target. NER-family targets must
/// parse cleanly; type-recognition samples get a partition only when
/// `cls_on_type_recognition` is set.
pub fn prepare_sample(sample: PromptSample, schema: &TypeSchema, cls_on_type_recognition: bool) -> Result<PreparedSample> {
    let partition = match sample.task {
        TaskKind::TypeRecognition if !cls_on_type_recognition => None,
        TaskKind::TypeRecognition => {
            let positive = parse_type_list(&sample.target, schema)?;
            let negative = schema.all_tags().difference(&positive).cloned().collect();
            Some((positive, negative))
        }
        task => {
            let outcome = if task == TaskKind::NerExp {
                parse_exp(&sample.target, schema)
            } else {
                parse_mentions(&sample.target, schema)
            };
            if outcome.malformed || !outcome.warnings.is_empty() {
                return Err(TonerError::invalid(
                    "training sample",
                    format!("target of `{}` does not parse cleanly", sample.id),
                ));
            }
            Some(derive_type_sets(&outcome.mentions, schema)?)
        }
    };
    Ok(PreparedSample { sample, partition })
}

/// Loss breakdown of one batch under `backend`.
pub fn batch_loss<F: Real>(
    backend: &dyn GeneratorBackend<F>,
    batch: &[&PreparedSample],
    schema: &TypeSchema,
    params: &GeneratorTraining<F>,
) -> Result<LossBreakdown<F>> {
    let mut generation = F::zero();
    let mut classification = F::zero();
    for p in batch {
        let s = &p.sample;
        generation = generation + generation_loss(&backend.teacher_forced_logprobs(&s.prompt, &s.target)?)?;
        if let Some((pos, neg)) = &p.partition {
            let logits = backend.type_logits(&s.prompt, params.scope)?;
            classification = classification + classification_loss(&logits, pos, neg, schema, params.sign)?;
        }
    }
    if params.reduction == BatchReduction::Mean && !batch.is_empty() {
        let n = F::lit(batch.len() as f64);
        generation = generation / n;
        classification = classification / n;
    }
    combined_loss(generation, classification, params.lambda)
}

fn epoch_batches<'a>(
    samples: &'a [PreparedSample],
    params: &GeneratorTraining<impl Real>,
    epoch: usize,
) -> Vec<Vec<&'a PreparedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(epoch as u64));
    match params.batch_mode {
        BatchMode::Mixed => {
            let mut order: Vec<&PreparedSample> = samples.iter().collect();
            order.shuffle(&mut rng);
            order.chunks(params.batch_size).map(<[_]>::to_vec).collect()
        }
        BatchMode::Homogeneous => {
            let mut groups: BTreeMap<TaskKind, Vec<&PreparedSample>> = BTreeMap::new();
            for s in samples {
                groups.entry(s.sample.task).or_default().push(s);
            }
            let mut batches = Vec::new();
            for group in groups.values_mut() {
                group.shuffle(&mut rng);
                batches.extend(group.chunks(params.batch_size).map(<[_]>::to_vec));
            }
            batches.shuffle(&mut rng);
            batches
        }
    }
}

/// Runs the training loop. Each record holds the batch loss measured just
/// before that batch's update.
pub fn train_generator<F: Real, G: TrainableGenerator<F>>(
    backend: &mut G,
    samples: &[PreparedSample],
    schema: &TypeSchema,
    params: &GeneratorTraining<F>,
) -> TrainOutcome<F> {
    let mut outcome = TrainOutcome {
        steps: Vec::new(),
        error: None,
    };
    if params.batch_size == 0 {
        outcome.error = Some(TonerError::invalid("batch size", "must be positive"));
        return outcome;
    }
    for epoch in 0..params.epochs {
        for batch in epoch_batches(samples, params, epoch) {
            let step = (|| -> Result<StepRecord<F>> {
                let breakdown = batch_loss(&*backend, &batch, schema, params)?;
                let objective =
                    |b: &dyn GeneratorBackend<F>| batch_loss(b, &batch, schema, params).map(|l| l.total);
                backend.apply_update(&objective)?;
                Ok(StepRecord {
                    step: outcome.steps.len(),
                    generation: breakdown.generation,
                    classification: breakdown.classification,
                    total: breakdown.total,
                })
            })();
            match step {
                Ok(r) => outcome.steps.push(r),
                Err(e) => {
                    outcome.error = Some(e);
                    return outcome;
                }
            }
        }
    }
    outcome
}
