//! BIO corpus reading and construction of the fine-tuning sample sets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{serialize_exp, serialize_mentions};
use crate::error::{Result, TonerError};
use crate::io::read_to_string;
use crate::matching::MatchingPair;
use crate::num::Real;
use crate::prompt::{
    build_exp_prompt, build_filtered_prompt, build_ner_prompt, build_type_recognition_prompt, render_type_list,
    PromptSample, TaskKind,
};
use crate::types::{AnnotatedExample, EntityMention, FilteredSchema, TypeSchema};

pub const DOCSTART: &str = "-DOCSTART-";
/// Explanation text that expands to [`DEFAULT_EXPLANATION`].
pub const DEFAULT_EXPLANATION_SENTINEL: &str = "@default";
pub const DEFAULT_EXPLANATION: &str = "No entity in the text belongs to any pre-defined entity type.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = TonerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(TonerError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub examples: Vec<AnnotatedExample>,
    pub schema: TypeSchema,
}

impl CorpusSplit {
    pub fn get(&self, id: &str) -> Option<&AnnotatedExample> {
        self.examples.iter().find(|e| e.id() == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub example_id: String,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BioOptions {
    /// Column holding the tag; the last column when `None`.
    pub tag_column: Option<usize>,
    /// Reject an `I-X` that does not continue an `X` entity instead of
    /// starting a new one.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum BioTag {
    Outside,
    Begin(String),
    Inside(String),
}

fn parse_tag(raw: &str, line: usize, schema: &TypeSchema) -> Result<BioTag> {
    if raw == "O" {
        return Ok(BioTag::Outside);
    }
    let (prefix, ty) = raw.split_once('-').ok_or_else(|| TonerError::Parse {
        line,
        message: format!("tag `{raw}` is not O, B-X or I-X"),
    })?;
    if !schema.contains(ty) {
        return Err(TonerError::SchemaMismatch {
            tag: ty.to_owned(),
            line: Some(line),
        });
    }
    match prefix {
        "B" => Ok(BioTag::Begin(ty.to_owned())),
        "I" => Ok(BioTag::Inside(ty.to_owned())),
        _ => Err(TonerError::Parse {
            line,
            message: format!("tag `{raw}` has unknown prefix `{prefix}`"),
        }),
    }
}

/// Collapses BIO-tagged tokens into mentions: each maximal `B-X (I-X)*` run
/// becomes one mention with its tokens joined by single spaces.
fn decode_runs(tokens: &[(String, BioTag, usize)], strict: bool) -> Result<Vec<EntityMention>> {
    let mut mentions = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    let close = |current: &mut Option<(String, Vec<&str>)>, out: &mut Vec<EntityMention>| -> Result<()> {
        if let Some((tag, words)) = current.take() {
            out.push(EntityMention::new(tag, words.join(" "))?);
        }
        Ok(())
    };
    for (token, tag, line) in tokens {
        match tag {
            BioTag::Outside => close(&mut current, &mut mentions)?,
            BioTag::Begin(ty) => {
                close(&mut current, &mut mentions)?;
                current = Some((ty.clone(), vec![token]));
            }
            BioTag::Inside(ty) => match &mut current {
                Some((open, words)) if open == ty => words.push(token),
                _ if strict => {
                    return Err(TonerError::Parse {
                        line: *line,
                        message: format!("I-{ty} does not continue a {ty} entity"),
                    })
                }
                _ => {
                    close(&mut current, &mut mentions)?;
                    current = Some((ty.clone(), vec![token]));
                }
            },
        }
    }
    close(&mut current, &mut mentions)?;
    Ok(mentions)
}

/// Parses BIO column text. Sentences are separated by blank lines and
/// `-DOCSTART-` lines are skipped. Example ids are `<split>-<n>`.
pub fn parse_bio(text: &str, name: SplitName, schema: &TypeSchema, options: &BioOptions) -> Result<CorpusSplit> {
    let mut examples = Vec::new();
    let mut columns: Option<usize> = None;
    let mut sentence: Vec<(String, BioTag, usize)> = Vec::new();

    let mut flush = |sentence: &mut Vec<(String, BioTag, usize)>| -> Result<()> {
        if sentence.is_empty() {
            return Ok(());
        }
        let mentions = decode_runs(sentence, options.strict)?;
        let words: Vec<&str> = sentence.iter().map(|(t, _, _)| t.as_str()).collect();
        let id = format!("{}-{}", name, examples.len());
        examples.push(AnnotatedExample::new(id, words.join(" "), mentions, schema)?);
        sentence.clear();
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut sentence)?;
            continue;
        }
        if fields[0] == DOCSTART {
            flush(&mut sentence)?;
            continue;
        }
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(TonerError::Parse {
                line,
                message: format!("expected {expected} columns, found {}", fields.len()),
            });
        }
        let tag_column = options.tag_column.unwrap_or(expected - 1);
        if tag_column == 0 || tag_column >= fields.len() {
            return Err(TonerError::Parse {
                line,
                message: format!("tag column {tag_column} out of range for {} columns", fields.len()),
            });
        }
        let tag = parse_tag(fields[tag_column], line, schema)?;
        sentence.push((fields[0].to_owned(), tag, line));
    }
    flush(&mut sentence)?;

    Ok(CorpusSplit {
        name,
        examples,
        schema: schema.clone(),
    })
}

pub fn read_bio_corpus(
    path: &Path,
    name: SplitName,
    schema: &TypeSchema,
    options: &BioOptions,
) -> Result<CorpusSplit> {
    parse_bio(&read_to_string(path)?, name, schema, options)
}

/// Re-encodes an example as two-column BIO lines (token, tag), locating each
/// mention left to right in the space-separated sentence.
pub fn to_bio_lines(example: &AnnotatedExample) -> Result<String> {
    let tokens: Vec<&str> = example.sentence().split(' ').collect();
    let mut tags = vec!["O".to_owned(); tokens.len()];
    let mut cursor = 0;
    for m in example.mentions() {
        let words: Vec<&str> = m.surface().split(' ').collect();
        let start = (cursor..=tokens.len().saturating_sub(words.len()))
            .find(|&s| tokens[s..s + words.len()] == words[..])
            .ok_or_else(|| {
                TonerError::invalid(
                    "example",
                    format!("mention {:?} not found in {:?}", m.surface(), example.id()),
                )
            })?;
        for (j, tag) in tags[start..start + words.len()].iter_mut().enumerate() {
            let prefix = if j == 0 { "B" } else { "I" };
            *tag = format!("{prefix}-{}", m.type_tag());
        }
        cursor = start + words.len();
    }
    let mut out = String::new();
    for (t, tag) in tokens.iter().zip(&tags) {
        out.push_str(t);
        out.push(' ');
        out.push_str(tag);
        out.push('\n');
    }
    Ok(out)
}

fn filtered_for<'a, F>(
    filtered: Option<&'a HashMap<String, FilteredSchema<F>>>,
    id: &str,
) -> Result<Option<&'a FilteredSchema<F>>> {
    match filtered {
        None => Ok(None),
        Some(map) => map
            .get(id)
            .map(Some)
            .ok_or_else(|| TonerError::Config(format!("no filtered schema for example `{id}`"))),
    }
}

fn retained_meta<F: Real>(sample: PromptSample, f: &FilteredSchema<F>) -> PromptSample {
    sample
        .with_meta("retained", f.retained.join(","))
        .with_meta("delta", f.threshold.to_string())
}

/// One NER sample per example, or one NER_FILTERED sample per example when
/// per-example filtered schemas are given.
pub fn build_ner_samples<F: Real>(
    split: &CorpusSplit,
    filtered: Option<&HashMap<String, FilteredSchema<F>>>,
) -> Result<Vec<PromptSample>> {
    split
        .examples
        .iter()
        .map(|ex| {
            let target = serialize_mentions(ex.mentions(), &split.schema)?;
            match filtered_for(filtered, ex.id())? {
                None => PromptSample::new(
                    ex.id(),
                    TaskKind::Ner,
                    build_ner_prompt(&split.schema, ex.sentence()),
                    target,
                ),
                Some(f) => {
                    let prompt = build_filtered_prompt(&split.schema, ex.sentence(), f)?;
                    PromptSample::new(ex.id(), TaskKind::NerFiltered, prompt, target).map(|s| retained_meta(s, f))
                }
            }
        })
        .collect()
}

/// Indices of the `⌈fraction · n⌉` examples picked for auxiliary samples,
/// ascending.
pub fn select_auxiliary(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TonerError::invalid("auxiliary fraction", format!("{fraction} is not in (0, 1]")));
    }
    if n == 0 {
        return Err(TonerError::invalid("auxiliary samples", "split is empty"));
    }
    // guard against 0.2 * 100 landing a hair above 20
    let k = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Type-recognition samples for a seeded random subset of the split. The
/// target lists the gold types' display names in schema order.
pub fn build_auxiliary_samples(split: &CorpusSplit, fraction: f64, seed: u64) -> Result<Vec<PromptSample>> {
    select_auxiliary(split.examples.len(), fraction, seed)?
        .into_iter()
        .map(|i| {
            let ex = &split.examples[i];
            let target = render_type_list(&split.schema.display_names_of(ex.positive_types()));
            PromptSample::new(
                ex.id(),
                TaskKind::TypeRecognition,
                build_type_recognition_prompt(&split.schema, ex.sentence()),
                target,
            )
        })
        .collect()
}

/// NER_EXP samples for the examples that have an explanation record, in
/// split order.
pub fn merge_explanations<F: Real>(
    split: &CorpusSplit,
    records: &[ExplanationRecord],
    filtered: Option<&HashMap<String, FilteredSchema<F>>>,
) -> Result<Vec<PromptSample>> {
    let known: HashSet<&str> = split.examples.iter().map(|e| e.id()).collect();
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(records.len());
    for r in records {
        if !known.contains(r.example_id.as_str()) {
            return Err(TonerError::Referential(format!(
                "explanation refers to unknown example `{}`",
                r.example_id
            )));
        }
        if r.explanation.trim().is_empty() {
            return Err(TonerError::invalid(
                "explanation record",
                format!("empty explanation for `{}`", r.example_id),
            ));
        }
        if by_id.insert(&r.example_id, &r.explanation).is_some() {
            return Err(TonerError::Referential(format!(
                "more than one explanation for example `{}`",
                r.example_id
            )));
        }
    }
    let mut out = Vec::with_capacity(by_id.len());
    for ex in &split.examples {
        let Some(&text) = by_id.get(ex.id()) else {
            continue;
        };
        let explanation = if text.trim() == DEFAULT_EXPLANATION_SENTINEL {
            DEFAULT_EXPLANATION
        } else {
            text.trim()
        };
        let f = filtered_for(filtered, ex.id())?;
        let prompt = build_exp_prompt(&split.schema, ex.sentence(), f)?;
        let target = serialize_exp(ex.mentions(), explanation, &split.schema)?;
        out.push(PromptSample::new(ex.id(), TaskKind::NerExp, prompt, target)?);
    }
    Ok(out)
}

pub fn build_matching_pairs(split: &CorpusSplit) -> Vec<MatchingPair> {
    split
        .examples
        .iter()
        .map(|ex| MatchingPair {
            id: ex.id().to_owned(),
            sentence: ex.sentence().to_owned(),
            positive: ex.positive_types().clone(),
            negative: ex.negative_types().clone(),
            no_positive: ex.positive_types().is_empty(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_examples: u64,
    pub n_mentions: u64,
    pub mentions_per_type: BTreeMap<String, u64>,
    pub empty_positive: u64,
}

pub fn corpus_stats(split: &CorpusSplit) -> CorpusStats {
    let mut mentions_per_type: BTreeMap<String, u64> = split.schema.tags().map(|t| (t.to_owned(), 0)).collect();
    let mut n_mentions = 0;
    let mut empty_positive = 0;
    for ex in &split.examples {
        for m in ex.mentions() {
            *mentions_per_type.entry(m.type_tag().to_owned()).or_default() += 1;
            n_mentions += 1;
        }
        if ex.positive_types().is_empty() {
            empty_positive += 1;
        }
    }
    CorpusStats {
        n_examples: split.examples.len() as u64,
        n_mentions,
        mentions_per_type,
        empty_positive,
    }
}
