//! Instruction prompts and fine-tuning sample records.
//!
//! Lines are joined with `\n` and prompts carry no trailing newline. The
//! first line of every NER-style prompt always lists the full schema.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TonerError};
use crate::num::Real;
use crate::types::{FilteredSchema, TypeSchema};

const NER_INSTRUCTION: &str = "List all named entities of type ";
const TYPE_RECOGNITION_INSTRUCTION: &str = "List all entity types in the text from type ";
const EXPLANATION_SUFFIX: &str = " and give explanations.";
pub const TEXT_PREFIX: &str = "Text: ";
pub const FILTERED_PREFIX: &str = "Entities of type ";
pub const FILTERED_SUFFIX: &str = " may exist in text.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Ner,
    NerFiltered,
    TypeRecognition,
    NerExp,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Ner,
        TaskKind::NerFiltered,
        TaskKind::TypeRecognition,
        TaskKind::NerExp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Ner => "NER",
            TaskKind::NerFiltered => "NER_FILTERED",
            TaskKind::TypeRecognition => "TYPE_RECOGNITION",
            TaskKind::NerExp => "NER_EXP",
        }
    }

    /// Tasks whose target is an entity list.
    pub fn is_ner_family(self) -> bool {
        !matches!(self, TaskKind::TypeRecognition)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One fine-tuning record. `meta` is in-memory bookkeeping and is not part
/// of the JSON-lines record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub id: String,
    pub task: TaskKind,
    pub prompt: String,
    pub target: String,
    #[serde(skip)]
    pub meta: BTreeMap<String, String>,
}

impl PromptSample {
    pub fn new(id: impl Into<String>, task: TaskKind, prompt: String, target: String) -> Result<Self> {
        if prompt.is_empty() || target.is_empty() {
            return Err(TonerError::invalid("prompt sample", "prompt and target must be nonempty"));
        }
        Ok(PromptSample {
            id: id.into(),
            task,
            prompt,
            target,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_owned(), value.into());
        self
    }
}

pub fn render_type_list<S: AsRef<str>>(names: &[S]) -> String {
    let mut out = String::from("[");
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(n.as_ref());
    }
    out.push(']');
    out
}

pub fn build_ner_prompt(schema: &TypeSchema, sentence: &str) -> String {
    format!(
        "{NER_INSTRUCTION}{}\n{TEXT_PREFIX}{sentence}",
        render_type_list(&schema.display_names())
    )
}

/// Display names of the retained types, in retained (score) order.
fn retained_names<'a, F>(schema: &'a TypeSchema, filtered: &FilteredSchema<F>) -> Result<Vec<&'a str>> {
    for s in &filtered.scores {
        if !schema.contains(&s.type_tag) {
            return Err(TonerError::Config(format!(
                "filtered schema scores type `{}` which is not in the prompt schema",
                s.type_tag
            )));
        }
    }
    filtered
        .retained
        .iter()
        .map(|tag| {
            schema.get(tag).map(|t| t.display_name()).map_err(|_| {
                TonerError::Config(format!(
                    "filtered schema retains type `{tag}` which is not in the prompt schema"
                ))
            })
        })
        .collect()
}

fn filtered_line(names: &[&str]) -> String {
    format!("{FILTERED_PREFIX}{}{FILTERED_SUFFIX}", render_type_list(names))
}

pub fn build_filtered_prompt<F: Real>(
    schema: &TypeSchema,
    sentence: &str,
    filtered: &FilteredSchema<F>,
) -> Result<String> {
    let names = retained_names(schema, filtered)?;
    Ok(format!("{}\n{}", build_ner_prompt(schema, sentence), filtered_line(&names)))
}

pub fn build_type_recognition_prompt(schema: &TypeSchema, sentence: &str) -> String {
    format!(
        "{TYPE_RECOGNITION_INSTRUCTION}{}\n{TEXT_PREFIX}{sentence}",
        render_type_list(&schema.display_names())
    )
}

pub fn build_exp_prompt<F: Real>(
    schema: &TypeSchema,
    sentence: &str,
    filtered: Option<&FilteredSchema<F>>,
) -> Result<String> {
    let mut out = format!(
        "{NER_INSTRUCTION}{}{EXPLANATION_SUFFIX}\n{TEXT_PREFIX}{sentence}",
        render_type_list(&schema.display_names())
    );
    if let Some(filtered) = filtered {
        let names = retained_names(schema, filtered)?;
        out.push('\n');
        out.push_str(&filtered_line(&names));
    }
    Ok(out)
}

/// Sentence carried on the `Text: ` line of a prompt.
pub fn extract_sentence(prompt: &str) -> Option<&str> {
    prompt.lines().find_map(|l| l.strip_prefix(TEXT_PREFIX))
}

/// Display names on the filtered-types hint line, if the prompt has one.
pub fn extract_filtered_names(prompt: &str) -> Option<Vec<&str>> {
    let line = prompt
        .lines()
        .find_map(|l| l.strip_prefix(FILTERED_PREFIX)?.strip_suffix(FILTERED_SUFFIX))?;
    let inner = line.strip_prefix('[')?.strip_suffix(']')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    Some(inner.split(',').map(str::trim).collect())
}
