//! Entity-level micro precision/recall/F1 over `(type, surface)` tuples,
//! threshold sweeps and ablation tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{EncoderBackend, GeneratorBackend};
use crate::codec::{parse_exp, parse_mentions, ParseOutcome};
use crate::error::{Result, TonerError};
use crate::ingest::CorpusSplit;
use crate::matching::{filter_schema, TypeScorer};
use crate::num::Real;
use crate::prompt::build_filtered_prompt;
use crate::types::{EntityMention, TypeSchema};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    #[serde(flatten)]
    pub total: Counts,
    pub per_type: BTreeMap<String, Counts>,
    pub parse_failures: u64,
}

impl MatchCounts {
    /// Associative, commutative merge.
    pub fn merge(&mut self, other: &MatchCounts) {
        self.total.add(other.total);
        for (tag, c) in &other.per_type {
            self.per_type.entry(tag.clone()).or_default().add(*c);
        }
        self.parse_failures += other.parse_failures;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Prf<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupePolicy {
    /// Duplicated tuples must be predicted as many times as they occur.
    #[default]
    Multiset,
    /// Both sides are deduplicated before matching.
    Set,
}

/// Which grammar the predictions follow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputStyle {
    #[default]
    Mentions,
    Explained,
}

impl OutputStyle {
    pub fn parse(self, text: &str, schema: &TypeSchema) -> ParseOutcome {
        match self {
            OutputStyle::Mentions => parse_mentions(text, schema),
            OutputStyle::Explained => parse_exp(text, schema),
        }
    }
}

/// Trim and collapse internal whitespace runs. Case is preserved.
pub fn normalize_surface(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn tuple_counts(mentions: &[EntityMention]) -> HashMap<(String, String), u64> {
    let mut out = HashMap::new();
    for m in mentions {
        *out.entry((m.type_tag().to_owned(), normalize_surface(m.surface())))
            .or_insert(0) += 1;
    }
    out
}

/// Multiset matching of gold against predicted tuples for one example.
pub fn match_counts(gold: &[EntityMention], pred: &[EntityMention]) -> MatchCounts {
    let gold_counts = tuple_counts(gold);
    let pred_counts = tuple_counts(pred);
    let mut out = MatchCounts::default();
    for ((tag, surface), &g) in &gold_counts {
        let p = pred_counts.get(&(tag.clone(), surface.clone())).copied().unwrap_or(0);
        let entry = out.per_type.entry(tag.clone()).or_default();
        let tp = g.min(p);
        entry.tp += tp;
        entry.fn_ += g - tp;
    }
    for ((tag, surface), &p) in &pred_counts {
        let g = gold_counts.get(&(tag.clone(), surface.clone())).copied().unwrap_or(0);
        out.per_type.entry(tag.clone()).or_default().fp += p - g.min(p);
    }
    for c in out.per_type.values() {
        out.total.add(*c);
    }
    out
}

pub fn micro_prf<F: Real>(counts: &Counts) -> Prf<F> {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            F::zero()
        } else {
            F::lit(num as f64) / F::lit(den as f64)
        }
    };
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if precision + recall > F::zero() {
        F::lit(2.0) * precision * recall / (precision + recall)
    } else {
        F::zero()
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub dedupe: DedupePolicy,
    pub style: OutputStyle,
    /// Overrides the fingerprint derived from the schema and these options.
    pub fingerprint: Option<String>,
}

impl EvalOptions {
    fn fingerprint_for(&self, schema: &TypeSchema) -> String {
        if let Some(f) = &self.fingerprint {
            return f.clone();
        }
        let mut hasher = Sha256::new();
        for t in schema.iter() {
            hasher.update(t.tag().as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(format!("{:?}/{:?}", self.dedupe, self.style).as_bytes());
        hex::encode(hasher.finalize())[..16].to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct EvalReport<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub counts: MatchCounts,
    pub n_examples: u64,
    pub missing_predictions: u64,
    pub parse_warnings: u64,
    pub fingerprint: String,
}

impl<F: Real> EvalReport<F> {
    /// Aligned-column summary with one row per type.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = |x: F| x.to_f64_lossy() * 100.0;
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}", "type", "P", "R", "F1", "tp", "fp", "fn");
        for (tag, c) in &self.counts.per_type {
            let prf = micro_prf::<F>(c);
            let _ = writeln!(
                out,
                "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6} {:>6}",
                tag,
                pct(prf.precision),
                pct(prf.recall),
                pct(prf.f1),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        let t = &self.counts.total;
        let _ = writeln!(
            out,
            "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6} {:>6}",
            "micro",
            pct(self.precision),
            pct(self.recall),
            pct(self.f1),
            t.tp,
            t.fp,
            t.fn_
        );
        let _ = writeln!(
            out,
            "examples: {}  missing predictions: {}  parse failures: {}  parse warnings: {}  fingerprint: {}",
            self.n_examples, self.missing_predictions, self.counts.parse_failures, self.parse_warnings, self.fingerprint
        );
        out
    }
}

fn dedupe(mentions: Vec<EntityMention>) -> Vec<EntityMention> {
    let mut seen = std::collections::HashSet::new();
    mentions
        .into_iter()
        .filter(|m| seen.insert((m.type_tag().to_owned(), normalize_surface(m.surface()))))
        .collect()
}

/// Scores raw generator outputs against a split's gold mentions. Missing
/// predictions count as empty; malformed outputs count as empty and are
/// tallied in `parse_failures`.
pub fn evaluate_dataset<F: Real>(
    split: &CorpusSplit,
    predictions: &HashMap<String, String>,
    schema: &TypeSchema,
    options: &EvalOptions,
) -> EvalReport<F> {
    let mut counts = MatchCounts::default();
    let mut missing = 0;
    let mut warnings = 0;
    for ex in &split.examples {
        let pred = match predictions.get(ex.id()) {
            None => {
                missing += 1;
                Vec::new()
            }
            Some(text) => {
                let outcome = options.style.parse(text, schema);
                warnings += outcome.warnings.len() as u64;
                if outcome.malformed {
                    counts.parse_failures += 1;
                }
                outcome.mentions
            }
        };
        let gold = ex.mentions().to_vec();
        let (gold, pred) = match options.dedupe {
            DedupePolicy::Multiset => (gold, pred),
            DedupePolicy::Set => (dedupe(gold), dedupe(pred)),
        };
        counts.merge(&match_counts(&gold, &pred));
    }
    let prf = micro_prf::<F>(&counts.total);
    EvalReport {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        counts,
        n_examples: split.examples.len() as u64,
        missing_predictions: missing,
        parse_warnings: warnings,
        fingerprint: options.fingerprint_for(schema),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SweepRow<F> {
    pub delta: F,
    pub retained_mean: F,
    pub report: EvalReport<F>,
}

/// Rows completed so far, plus the error that stopped the sweep, if any.
#[derive(Debug)]
pub struct SweepOutcome<F> {
    pub rows: Vec<SweepRow<F>>,
    pub error: Option<TonerError>,
}

impl<F: Real> SweepOutcome<F> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,P,R,F1,retained_mean\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.delta, r.report.precision, r.report.recall, r.report.f1, r.retained_mean
            );
        }
        out
    }
}

/// Scores each sentence once, then for every threshold filters the schema,
/// builds filtered prompts, generates and evaluates.
pub fn threshold_sweep<F: Real>(
    split: &CorpusSplit,
    schema: &TypeSchema,
    encoder: &dyn EncoderBackend<F>,
    generator: &dyn GeneratorBackend<F>,
    grid: &[F],
    max_length: usize,
    options: &EvalOptions,
) -> SweepOutcome<F> {
    let mut outcome = SweepOutcome {
        rows: Vec::with_capacity(grid.len()),
        error: None,
    };
    let mut scorer = TypeScorer::new();
    let scores = match split
        .examples
        .iter()
        .map(|ex| scorer.score(encoder, ex.sentence(), schema))
        .collect::<Result<Vec<_>>>()
    {
        Ok(s) => s,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    for &delta in grid {
        let row = (|| -> Result<SweepRow<F>> {
            let mut predictions = HashMap::with_capacity(split.examples.len());
            let mut retained = 0usize;
            for (ex, s) in split.examples.iter().zip(&scores) {
                let filtered = filter_schema(s, delta, schema);
                retained += filtered.retained.len();
                let prompt = build_filtered_prompt(schema, ex.sentence(), &filtered)?;
                predictions.insert(ex.id().to_owned(), generator.generate(&prompt, max_length)?);
            }
            let n = split.examples.len().max(1);
            Ok(SweepRow {
                delta,
                retained_mean: F::lit(retained as f64) / F::lit(n as f64),
                report: evaluate_dataset(split, &predictions, schema, options),
            })
        })();
        match row {
            Ok(r) => outcome.rows.push(r),
            Err(e) => {
                outcome.error = Some(e);
                break;
            }
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct AblationRow<F> {
    pub name: String,
    /// F1 in percent.
    pub f1: F,
    /// Difference to the previous row in percentage points.
    pub delta_points: Option<F>,
    /// Relative change to the previous row in percent.
    pub delta_relative: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct AblationTable<F> {
    pub rows: Vec<AblationRow<F>>,
}

/// Builds an ablation table from `(variant, F1)` pairs with F1 in `[0, 1]`,
/// listed in the order the components were added.
pub fn ablation_report<F: Real>(variants: &[(String, F)]) -> Result<AblationTable<F>> {
    if variants.len() < 2 {
        return Err(TonerError::invalid("ablation", "needs at least two variants"));
    }
    let hundred = F::lit(100.0);
    let mut rows: Vec<AblationRow<F>> = Vec::with_capacity(variants.len());
    for (name, f1) in variants {
        let f1 = *f1 * hundred;
        let (delta_points, delta_relative) = match rows.last() {
            None => (None, None),
            Some(prev) => {
                let rel = if prev.f1 == F::zero() {
                    None
                } else {
                    Some((f1 / prev.f1 - F::one()) * hundred)
                };
                (Some(f1 - prev.f1), rel)
            }
        };
        rows.push(AblationRow {
            name: name.clone(),
            f1,
            delta_points,
            delta_relative,
        });
    }
    Ok(AblationTable { rows })
}

impl<F: Real> fmt::Display for AblationTable<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        writeln!(f, "{:<width$}  {:>7}  {:>10}  {:>10}", "variant", "F1", "Δ points", "Δ relative")?;
        for r in &self.rows {
            let pts = r
                .delta_points
                .map(|d| format!("{:+.2}", d.to_f64_lossy()))
                .unwrap_or_default();
            let rel = r
                .delta_relative
                .map(|d| format!("{:+.2}%", d.to_f64_lossy()))
                .unwrap_or_default();
            writeln!(f, "{:<width$}  {:>7.2}  {:>10}  {:>10}", r.name, r.f1.to_f64_lossy(), pts, rel)?;
        }
        Ok(())
    }
}
