//! Deterministic test doubles for the backend contracts.
//!
//! Token vectors come from a seeded FNV/SplitMix hash of the token string, so
//! identical inputs always give bit-identical outputs. The trainable variants
//! take finite-difference steps with backtracking, which is enough to drive the
//! training loops on small convex problems.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{
    Capabilities, EncodedText, EncoderBackend, EncoderObjective, GeneratorBackend, GeneratorObjective, PoolingScope,
    TrainableEncoder, TrainableGenerator, UpdateReport,
};
use crate::codec::{parse_mentions, serialize_mentions};
use crate::error::{Result, TonerError};
use crate::num::Real;
use crate::prompt::{extract_filtered_names, extract_sentence};
use crate::types::{ClassifierLogits, EntityMention, TokenLogProbs, TypeSchema};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const MAX_HALVINGS: usize = 40;
const TOKEN_BUCKETS: usize = 16;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1) from the top 53 bits.
fn unit_interval(state: &mut u64) -> f64 {
    (splitmix64(state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Unit-norm pseudo-random vector for `token`.
pub fn token_vector<F: Real>(seed: u64, token: &str, dim: usize) -> Vec<F> {
    let mut state = fnv1a(seed, token.as_bytes());
    let raw: Vec<f64> = (0..dim).map(|_| unit_interval(&mut state)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm = if norm > 0.0 { norm } else { 1.0 };
    raw.into_iter().map(|x| F::lit(x / norm)).collect()
}

fn bucket_of(seed: u64, token: &str) -> usize {
    (fnv1a(seed ^ 0x5bd1_e995, token.as_bytes()) % TOKEN_BUCKETS as u64) as usize
}

fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// One steepest-descent step on `eval` using central differences, halving the
/// step until the loss goes down. Parameters stay put when no step helps.
pub(crate) fn descend<F: Real>(
    params: &[F],
    learning_rate: F,
    fd_step: F,
    eval: impl Fn(&[F]) -> Result<F>,
) -> Result<(Vec<F>, UpdateReport<F>)> {
    let before = eval(params)?;
    let unchanged = |p: &[F]| {
        (
            p.to_vec(),
            UpdateReport {
                loss_before: before,
                loss_after: before,
            },
        )
    };
    if !before.is_finite() {
        return Err(TonerError::Backend(format!("objective is not finite ({before})")));
    }
    let two = F::lit(2.0);
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + fd_step;
        let up = eval(&probe)?;
        probe[i] = orig - fd_step;
        let down = eval(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (two * fd_step));
    }
    if grad.iter().any(|g| !g.is_finite()) || grad.iter().all(|g| *g == F::zero()) {
        return Ok(unchanged(params));
    }
    let mut step = learning_rate;
    for _ in 0..MAX_HALVINGS {
        let candidate: Vec<F> = params.iter().zip(&grad).map(|(&p, &g)| p - step * g).collect();
        let after = eval(&candidate)?;
        if after < before {
            return Ok((
                candidate,
                UpdateReport {
                    loss_before: before,
                    loss_after: after,
                },
            ));
        }
        step = step / two;
    }
    Ok(unchanged(params))
}

/// Hash-based sentence encoder. Each whitespace token becomes a unit vector;
/// texts registered with [`MockEncoder::with_fixed`] encode to a single
/// explicit state instead.
#[derive(Debug, Clone)]
pub struct MockEncoder<F> {
    dim: usize,
    seed: u64,
    fixed: HashMap<String, Vec<F>>,
}

impl<F: Real> MockEncoder<F> {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEncoder {
            dim,
            seed,
            fixed: HashMap::new(),
        }
    }

    pub fn with_fixed(mut self, text: impl Into<String>, vector: Vec<F>) -> Result<Self> {
        if vector.len() != self.dim {
            return Err(TonerError::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.fixed.insert(text.into(), vector);
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl<F: Real> EncoderBackend<F> for MockEncoder<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EncodedText<F>> {
        if let Some(v) = self.fixed.get(text) {
            return Ok(EncodedText {
                states: vec![v.clone()],
                mask: vec![true],
            });
        }
        let states: Vec<Vec<F>> = text
            .split_whitespace()
            .map(|tok| token_vector(self.seed, tok, self.dim))
            .collect();
        let mask = vec![true; states.len()];
        Ok(EncodedText { states, mask })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MockEncoderState<F> {
    /// One bias vector per schema type, added to its description's states.
    pub biases: Vec<Vec<F>>,
}

/// [`MockEncoder`] plus a learnable per-type bias on description embeddings.
#[derive(Debug, Clone)]
pub struct MockTrainableEncoder<F> {
    base: MockEncoder<F>,
    descriptions: HashMap<String, usize>,
    state: MockEncoderState<F>,
    learning_rate: F,
    fd_step: F,
}

impl<F: Real> MockTrainableEncoder<F> {
    pub fn new(base: MockEncoder<F>, schema: &TypeSchema, learning_rate: F) -> Self {
        let descriptions = schema
            .iter()
            .enumerate()
            .map(|(i, t)| (t.description().to_owned(), i))
            .collect();
        let biases = vec![vec![F::zero(); base.dim]; schema.len()];
        MockTrainableEncoder {
            base,
            descriptions,
            state: MockEncoderState { biases },
            learning_rate,
            fd_step: F::lit(1e-6),
        }
    }

    pub fn state(&self) -> &MockEncoderState<F> {
        &self.state
    }

    pub fn restore(&mut self, state: MockEncoderState<F>) -> Result<()> {
        let expected = self.state.biases.len();
        if state.biases.len() != expected {
            return Err(TonerError::DimensionMismatch {
                expected,
                actual: state.biases.len(),
            });
        }
        if let Some(b) = state.biases.iter().find(|b| b.len() != self.base.dim) {
            return Err(TonerError::DimensionMismatch {
                expected: self.base.dim,
                actual: b.len(),
            });
        }
        self.state = state;
        Ok(())
    }

    fn flat(&self) -> Vec<F> {
        self.state.biases.iter().flatten().copied().collect()
    }

    fn with_flat(&self, flat: &[F]) -> Self {
        let mut next = self.clone();
        for (row, chunk) in next.state.biases.iter_mut().zip(flat.chunks(self.base.dim)) {
            row.copy_from_slice(chunk);
        }
        next
    }
}

impl<F: Real> EncoderBackend<F> for MockTrainableEncoder<F> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: true }
    }

    fn encode(&self, text: &str) -> Result<EncodedText<F>> {
        let mut encoded = self.base.encode(text)?;
        if let Some(&i) = self.descriptions.get(text) {
            let bias = &self.state.biases[i];
            for state in &mut encoded.states {
                for (x, b) in state.iter_mut().zip(bias) {
                    *x = *x + *b;
                }
            }
        }
        Ok(encoded)
    }
}

impl<F: Real> TrainableEncoder<F> for MockTrainableEncoder<F> {
    fn apply_update(&mut self, objective: &EncoderObjective<'_, F>) -> Result<UpdateReport<F>> {
        let flat = self.flat();
        let (next, report) = descend(&flat, self.learning_rate, self.fd_step, |p| {
            objective(&self.with_flat(p))
        })?;
        *self = self.with_flat(&next);
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    /// Replays the stored target for the prompt's sentence.
    Echo,
    /// Like `Echo` but unknown sentences are an error.
    StrictEcho,
    /// Always answers `[]`.
    Fallback,
    /// Stored gold mentions restricted to the types named on the prompt's
    /// filtered-types line (all gold when the line is absent).
    TypeAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MockGeneratorState<F> {
    pub head_weights: Vec<Vec<F>>,
    pub head_bias: Vec<F>,
    pub token_bias: Vec<F>,
}

/// Generator double with a hashed bag-of-tokens encoder, a linear classifier
/// head and per-bucket token log-probabilities `log σ(a_bucket)`.
#[derive(Debug, Clone)]
pub struct MockGenerator<F> {
    mode: GeneratorMode,
    schema: TypeSchema,
    targets: HashMap<String, String>,
    dim: usize,
    seed: u64,
    state: MockGeneratorState<F>,
    learning_rate: F,
    fd_step: F,
}

impl<F: Real> MockGenerator<F> {
    pub fn new(mode: GeneratorMode, schema: TypeSchema, dim: usize, seed: u64, learning_rate: F) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = fnv1a(seed, b"classifier-head");
        let head_weights = (0..schema.len())
            .map(|_| (0..dim).map(|_| F::lit(0.1 * unit_interval(&mut rng))).collect())
            .collect();
        let state = MockGeneratorState {
            head_weights,
            head_bias: vec![F::zero(); schema.len()],
            token_bias: vec![F::zero(); TOKEN_BUCKETS],
        };
        MockGenerator {
            mode,
            schema,
            targets: HashMap::new(),
            dim,
            seed,
            state,
            learning_rate,
            fd_step: F::lit(1e-6),
        }
    }

    /// Registers the target replayed for `sentence`. The first registration
    /// of a sentence wins.
    pub fn with_target(mut self, sentence: impl Into<String>, target: impl Into<String>) -> Self {
        self.insert_target(sentence, target);
        self
    }

    pub fn insert_target(&mut self, sentence: impl Into<String>, target: impl Into<String>) {
        self.targets.entry(sentence.into()).or_insert_with(|| target.into());
    }

    pub fn insert_gold(&mut self, sentence: impl Into<String>, mentions: &[EntityMention]) -> Result<()> {
        let target = serialize_mentions(mentions, &self.schema)?;
        self.insert_target(sentence, target);
        Ok(())
    }

    pub fn mode(&self) -> GeneratorMode {
        self.mode
    }

    pub fn state(&self) -> &MockGeneratorState<F> {
        &self.state
    }

    pub fn restore(&mut self, state: MockGeneratorState<F>) -> Result<()> {
        let k = self.schema.len();
        let shape_ok = state.head_weights.len() == k
            && state.head_weights.iter().all(|r| r.len() == self.dim)
            && state.head_bias.len() == k
            && state.token_bias.len() == TOKEN_BUCKETS;
        if !shape_ok {
            return Err(TonerError::Backend("generator state has the wrong shape".into()));
        }
        self.state = state;
        Ok(())
    }

    fn flat(&self) -> Vec<F> {
        let s = &self.state;
        s.head_weights
            .iter()
            .flatten()
            .chain(&s.head_bias)
            .chain(&s.token_bias)
            .copied()
            .collect()
    }

    fn with_flat(&self, flat: &[F]) -> Self {
        let mut next = self.clone();
        let mut it = flat.iter().copied();
        for row in &mut next.state.head_weights {
            for w in row.iter_mut() {
                *w = it.next().expect("flat parameter length");
            }
        }
        for b in next.state.head_bias.iter_mut().chain(next.state.token_bias.iter_mut()) {
            *b = it.next().expect("flat parameter length");
        }
        next
    }

    fn raw_output(&self, prompt: &str) -> Result<String> {
        let sentence = extract_sentence(prompt);
        let stored = sentence.and_then(|s| self.targets.get(s));
        match self.mode {
            GeneratorMode::Fallback => Ok("[]".to_owned()),
            GeneratorMode::Echo => Ok(stored.cloned().unwrap_or_else(|| "[]".to_owned())),
            GeneratorMode::StrictEcho => stored.cloned().ok_or_else(|| {
                TonerError::Backend(format!("no stored target for sentence {:?}", sentence.unwrap_or("")))
            }),
            GeneratorMode::TypeAware => {
                let Some(target) = stored else {
                    return Ok("[]".to_owned());
                };
                let gold = parse_mentions(target, &self.schema).mentions;
                let kept: Vec<EntityMention> = match extract_filtered_names(prompt) {
                    None => gold,
                    Some(names) => {
                        let allowed: Vec<&str> = names
                            .iter()
                            .filter_map(|n| self.schema.by_display_name(n))
                            .map(|t| t.tag())
                            .collect();
                        gold.into_iter()
                            .filter(|m| allowed.contains(&m.type_tag()))
                            .collect()
                    }
                };
                serialize_mentions(&kept, &self.schema)
            }
        }
    }
}

impl<F: Real> GeneratorBackend<F> for MockGenerator<F> {
    fn generate(&self, prompt: &str, max_length: usize) -> Result<String> {
        let out = self.raw_output(prompt)?;
        if out.split_whitespace().count() <= max_length {
            return Ok(out);
        }
        Ok(out.split_whitespace().take(max_length).collect::<Vec<_>>().join(" "))
    }

    fn teacher_forced_logprobs(&self, _prompt: &str, target: &str) -> Result<TokenLogProbs<F>> {
        let values = target
            .split_whitespace()
            .map(|tok| -softplus(-self.state.token_bias[bucket_of(self.seed, tok)]))
            .collect();
        TokenLogProbs::new(values)
    }

    fn pooled_rep(&self, prompt: &str, scope: PoolingScope) -> Result<Vec<F>> {
        let text = match scope {
            PoolingScope::Full => prompt,
            PoolingScope::SentenceOnly => extract_sentence(prompt)
                .ok_or_else(|| TonerError::Backend("prompt has no `Text: ` line".into()))?,
        };
        let mut sum = vec![F::zero(); self.dim];
        let mut n = 0usize;
        for tok in text.split_whitespace() {
            for (acc, x) in sum.iter_mut().zip(token_vector::<F>(self.seed, tok, self.dim)) {
                *acc = *acc + x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(TonerError::Degenerate("nothing to pool".into()));
        }
        let n = F::lit(n as f64);
        Ok(sum.into_iter().map(|x| x / n).collect())
    }

    fn type_logits(&self, prompt: &str, scope: PoolingScope) -> Result<ClassifierLogits<F>> {
        let h = self.pooled_rep(prompt, scope)?;
        let values = self
            .state
            .head_weights
            .iter()
            .zip(&self.state.head_bias)
            .map(|(row, &b)| row.iter().zip(&h).fold(b, |acc, (&w, &x)| acc + w * x))
            .collect();
        ClassifierLogits::new(values, &self.schema)
    }
}

impl<F: Real> TrainableGenerator<F> for MockGenerator<F> {
    fn apply_update(&mut self, objective: &GeneratorObjective<'_, F>) -> Result<UpdateReport<F>> {
        let flat = self.flat();
        let (next, report) = descend(&flat, self.learning_rate, self.fd_step, |p| {
            objective(&self.with_flat(p))
        })?;
        *self = self.with_flat(&next);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{embed_text, match_score};
    use crate::prompt::{build_filtered_prompt, build_ner_prompt};
    use crate::types::FilteredSchema;

    const CHINA: &str = "China says time right for Taiwan talks.";

    #[test]
    fn encoding_is_deterministic_and_unit_norm() {
        let enc = MockEncoder::<f64>::new(8, 7);
        let a = enc.encode("a b").unwrap();
        assert_eq!(a, enc.encode("a b").unwrap());
        for s in &a.states {
            let n: f64 = s.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let b = enc.encode("b a").unwrap();
        assert_eq!(a.states[0], b.states[1]);
        assert_eq!(a.states[1], b.states[0]);
        assert_ne!(a.states, b.states);
        let x = embed_text(&enc, "same text").unwrap();
        let y = embed_text(&enc, "same text").unwrap();
        assert!((match_score(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_seeds_differ() {
        let a = MockEncoder::<f64>::new(8, 1).encode("tok").unwrap();
        let b = MockEncoder::<f64>::new(8, 2).encode("tok").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn fixed_table_overrides_hashing() {
        let enc = MockEncoder::<f64>::new(3, 0).with_fixed("s", vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(enc.encode("s").unwrap().states, vec![vec![1.0, 0.0, 0.0]]);
        assert!(MockEncoder::<f64>::new(3, 0).with_fixed("s", vec![1.0]).is_err());
    }

    #[test]
    fn untrained_wrapper_matches_base() {
        let schema = TypeSchema::conll2003();
        let base = MockEncoder::<f64>::new(8, 3);
        let trainable = MockTrainableEncoder::new(base.clone(), &schema, 0.1);
        for t in schema.iter() {
            assert_eq!(base.encode(t.description()).unwrap(), trainable.encode(t.description()).unwrap());
        }
        assert!(trainable.capabilities().trainable);
        assert!(!base.capabilities().trainable);
    }

    fn fig1() -> (TypeSchema, Vec<EntityMention>) {
        let schema = TypeSchema::conll2003();
        let gold = vec![
            EntityMention::new("LOC", "China").unwrap(),
            EntityMention::new("LOC", "Taiwan").unwrap(),
        ];
        (schema, gold)
    }

    #[test]
    fn generation_modes() {
        let (schema, gold) = fig1();
        let mut echo = MockGenerator::<f64>::new(GeneratorMode::Echo, schema.clone(), 8, 0, 0.1);
        echo.insert_gold(CHINA, &gold).unwrap();
        let prompt = build_ner_prompt(&schema, CHINA);
        assert_eq!(echo.generate(&prompt, 512).unwrap(), "[(location, China), (location, Taiwan)]");
        assert_eq!(echo.generate(&build_ner_prompt(&schema, "unseen"), 512).unwrap(), "[]");

        let fallback = MockGenerator::<f64>::new(GeneratorMode::Fallback, schema.clone(), 8, 0, 0.1);
        assert_eq!(fallback.generate(&prompt, 512).unwrap(), "[]");

        let strict = MockGenerator::<f64>::new(GeneratorMode::StrictEcho, schema.clone(), 8, 0, 0.1);
        assert!(matches!(strict.generate(&prompt, 512), Err(TonerError::Backend(_))));

        let mut aware = MockGenerator::<f64>::new(GeneratorMode::TypeAware, schema.clone(), 8, 0, 0.1);
        aware.insert_gold(CHINA, &gold).unwrap();
        let only = |tags: &[&str]| FilteredSchema::<f64> {
            retained: tags.iter().map(|s| s.to_string()).collect(),
            threshold: 0.5,
            scores: vec![],
        };
        let p = build_filtered_prompt(&schema, CHINA, &only(&["LOC"])).unwrap();
        assert_eq!(aware.generate(&p, 512).unwrap(), "[(location, China), (location, Taiwan)]");
        let p = build_filtered_prompt(&schema, CHINA, &only(&["PER"])).unwrap();
        assert_eq!(aware.generate(&p, 512).unwrap(), "[]");
    }

    #[test]
    fn max_length_truncates() {
        let (schema, gold) = fig1();
        let mut echo = MockGenerator::<f64>::new(GeneratorMode::Echo, schema.clone(), 8, 0, 0.1);
        echo.insert_gold(CHINA, &gold).unwrap();
        let out = echo.generate(&build_ner_prompt(&schema, CHINA), 2).unwrap();
        assert_eq!(out, "[(location, China),");
    }

    #[test]
    fn logprobs_and_logits_respect_contract() {
        let (schema, _) = fig1();
        let generator = MockGenerator::<f64>::new(GeneratorMode::Echo, schema.clone(), 8, 0, 0.1);
        let prompt = build_ner_prompt(&schema, CHINA);
        let lp = generator
            .teacher_forced_logprobs(&prompt, "[(location, China), (location, Taiwan)]")
            .unwrap();
        assert_eq!(lp.len(), 4);
        assert!(lp.values().iter().all(|v| *v <= 0.0));
        assert!(generator.teacher_forced_logprobs(&prompt, "  ").is_err());
        let full = generator.type_logits(&prompt, PoolingScope::Full).unwrap();
        let sentence = generator.type_logits(&prompt, PoolingScope::SentenceOnly).unwrap();
        assert_eq!(full.values().len(), schema.len());
        assert_ne!(full, sentence);
        assert!(generator.pooled_rep("no text line", PoolingScope::SentenceOnly).is_err());
    }

    #[test]
    fn descend_lowers_a_quadratic() {
        let eval = |p: &[f64]| Ok((p[0] - 3.0).powi(2) + (p[1] + 1.0).powi(2));
        let mut params = vec![0.0, 0.0];
        let mut last = f64::INFINITY;
        for _ in 0..20 {
            let (next, report) = descend(&params, 0.4, 1e-6, eval).unwrap();
            assert!(report.loss_after < report.loss_before);
            assert!(report.loss_before < last);
            last = report.loss_before;
            params = next;
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn descend_keeps_params_at_optimum() {
        let (p, report) = descend(&[1.0_f64], 0.5, 1e-6, |p| Ok((p[0] - 1.0).powi(2))).unwrap();
        assert_eq!(p, vec![1.0]);
        assert_eq!(report.loss_before, report.loss_after);
    }

    #[test]
    fn generator_state_round_trip() {
        let (schema, _) = fig1();
        let g = MockGenerator::<f64>::new(GeneratorMode::Echo, schema.clone(), 4, 9, 0.1);
        let json = serde_json::to_string(g.state()).unwrap();
        let state: MockGeneratorState<f64> = serde_json::from_str(&json).unwrap();
        let mut h = MockGenerator::<f64>::new(GeneratorMode::Echo, schema, 4, 1, 0.1);
        h.restore(state).unwrap();
        assert_eq!(g.state(), h.state());
        let mut bad = g.state().clone();
        bad.head_bias.pop();
        assert!(h.restore(bad).is_err());
    }
}
