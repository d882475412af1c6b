//! The workflow subcommands. Each reads the config plus earlier artifacts
//! from the output directory and writes its own artifacts atomically.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::mock::{MockEncoder, MockEncoderState, MockGenerator, MockGeneratorState, MockTrainableEncoder};
use crate::backend::GeneratorBackend;
use crate::error::{Result, TonerError};
use crate::ingest::{
    build_auxiliary_samples, build_matching_pairs, build_ner_samples, corpus_stats, merge_explanations,
    read_bio_corpus, CorpusSplit, CorpusStats, ExplanationRecord, SplitName,
};
use crate::io::{parse_jsonl, read_json, read_jsonl, read_to_string, to_jsonl, write_atomic, write_json};
use crate::matching::{calibrate_threshold, filter_schema, train_matcher, CalibrationReport, MatcherTraining, TypeScorer};
use crate::metrics::{evaluate_dataset, threshold_sweep, EvalReport};
use crate::pipeline::config::RunConfig;
use crate::prompt::{build_filtered_prompt, build_ner_prompt, PromptSample, TaskKind};
use crate::training::{prepare_sample, train_generator, GeneratorTraining};
use crate::types::{FilteredSchema, TypeSchema};

pub const MATCHER_STATE: &str = "matcher_state.json";
pub const MATCHER_TRACE: &str = "matcher_trace.csv";
pub const CALIBRATION: &str = "calibration.json";
pub const DATASET: &str = "dataset.jsonl";
pub const DATASET_MANIFEST: &str = "dataset_manifest.json";
pub const GENERATOR_STATE: &str = "generator_state.json";
pub const TRAIN_TRACE: &str = "train_trace.csv";
pub const STATS: &str = "stats.json";

pub fn samples_file(split: SplitName) -> String {
    format!("samples_{split}.jsonl")
}

pub fn predictions_file(split: SplitName) -> String {
    format!("predictions_{split}.jsonl")
}

pub fn predict_summary_file(split: SplitName) -> String {
    format!("predict_{split}.json")
}

pub fn eval_files(split: SplitName) -> (String, String) {
    (format!("eval_{split}.json"), format!("eval_{split}.txt"))
}

pub fn sweep_file(split: SplitName) -> String {
    format!("sweep_{split}.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    TrainMatcher,
    Calibrate,
    BuildDataset,
    Train,
    Predict,
    Eval,
    Sweep,
}

impl Command {
    /// Pipeline order.
    pub const ALL: [Command; 8] = [
        Command::Ingest,
        Command::TrainMatcher,
        Command::Calibrate,
        Command::BuildDataset,
        Command::Train,
        Command::Predict,
        Command::Eval,
        Command::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::TrainMatcher => "train-matcher",
            Command::Calibrate => "calibrate",
            Command::BuildDataset => "build-dataset",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandArgs {
    /// Split for predict/eval/sweep; `test` when absent.
    pub split: Option<SplitName>,
    /// Threshold grid for sweep; the configured calibration grid when absent.
    pub grid: Option<Vec<f64>>,
    /// Predictions file for eval; the predict output when absent.
    pub predictions: Option<PathBuf>,
}

/// Runs one command and returns a short human-readable summary.
pub fn run(command: Command, config: &RunConfig, args: &CommandArgs) -> Result<String> {
    let split = args.split.unwrap_or(SplitName::Test);
    match command {
        Command::Ingest => cmd_ingest(config),
        Command::TrainMatcher => cmd_train_matcher(config),
        Command::Calibrate => cmd_calibrate(config),
        Command::BuildDataset => cmd_build_dataset(config),
        Command::Train => cmd_train(config),
        Command::Predict => cmd_predict(config, split),
        Command::Eval => cmd_eval(config, split, args.predictions.as_deref()),
        Command::Sweep => {
            let grid = args.grid.clone().unwrap_or_else(|| config.calibration_grid.clone());
            cmd_sweep(config, split, &grid)
        }
    }
}

fn load_split(config: &RunConfig, schema: &TypeSchema, split: SplitName) -> Result<CorpusSplit> {
    let path = config
        .split_path(split)
        .ok_or_else(|| TonerError::Config(format!("no `{split}` corpus configured")))?;
    read_bio_corpus(&path, split, schema, &config.bio_options())
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out_dir().join(name)
}

fn encoder(config: &RunConfig, schema: &TypeSchema) -> MockTrainableEncoder<f64> {
    MockTrainableEncoder::new(
        MockEncoder::new(config.embedding_dim, config.backend_seed),
        schema,
        config.matcher_learning_rate,
    )
}

/// The matcher with its trained state, if one has been saved.
fn trained_encoder(config: &RunConfig, schema: &TypeSchema) -> Result<(MockTrainableEncoder<f64>, bool)> {
    let mut enc = encoder(config, schema);
    let path = out_path(config, MATCHER_STATE);
    if !path.exists() {
        return Ok((enc, false));
    }
    let state: MockEncoderState<f64> = read_json(&path)?;
    enc.restore(state)?;
    Ok((enc, true))
}

fn generator(config: &RunConfig, schema: &TypeSchema) -> Result<MockGenerator<f64>> {
    Ok(MockGenerator::new(
        config.generator_mode()?,
        schema.clone(),
        config.embedding_dim,
        config.backend_seed,
        config.learning_rate,
    ))
}

/// Calibrated threshold when a calibration report exists, else the
/// configured one.
fn effective_delta(config: &RunConfig) -> Result<f64> {
    let path = out_path(config, CALIBRATION);
    if !path.exists() {
        return Ok(config.delta);
    }
    let report: CalibrationReport<f64> = read_json(&path)?;
    Ok(report.chosen)
}

fn filtered_schemas(
    encoder: &MockTrainableEncoder<f64>,
    split: &CorpusSplit,
    delta: f64,
) -> Result<HashMap<String, FilteredSchema<f64>>> {
    let mut scorer = TypeScorer::new();
    split
        .examples
        .iter()
        .map(|ex| {
            let scores = scorer.score(encoder, ex.sentence(), &split.schema)?;
            Ok((ex.id().to_owned(), filter_schema(&scores, delta, &split.schema)))
        })
        .collect()
}

pub fn cmd_ingest(config: &RunConfig) -> Result<String> {
    let schema = config.load_schema()?;
    let configured: Vec<SplitName> = SplitName::ALL
        .into_iter()
        .filter(|s| config.split_path(*s).is_some())
        .collect();
    if configured.is_empty() {
        return Err(TonerError::Config("no corpus configured".into()));
    }
    // Everything is read and built before the first write, so a bad input
    // leaves no partial outputs behind.
    let mut outputs: Vec<(String, String)> = Vec::new();
    let mut stats: BTreeMap<String, CorpusStats> = BTreeMap::new();
    for split in configured {
        let corpus = load_split(config, &schema, split)?;
        outputs.push((samples_file(split), to_jsonl(&build_ner_samples::<f64>(&corpus, None)?)?));
        stats.insert(split.to_string(), corpus_stats(&corpus));
    }
    for (name, text) in &outputs {
        write_atomic(&out_path(config, name), text.as_bytes())?;
    }
    write_json(&out_path(config, STATS), &stats)?;
    let summary: Vec<String> = stats.iter().map(|(s, st)| format!("{s}: {} sentences", st.n_examples)).collect();
    Ok(summary.join(", "))
}

pub fn cmd_train_matcher(config: &RunConfig) -> Result<String> {
    let schema = config.load_schema()?;
    let train = load_split(config, &schema, SplitName::Train)?;
    let mut enc = if config.resume {
        trained_encoder(config, &schema)?.0
    } else {
        encoder(config, &schema)
    };
    let params = MatcherTraining {
        tau: config.tau,
        epochs: config.matcher_epochs,
        batch_size: config.matcher_batch_size,
        shuffle_seed: Some(config.seed),
    };
    let trace = train_matcher(&mut enc, &build_matching_pairs(&train), &schema, &params)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, loss) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    write_json(&out_path(config, MATCHER_STATE), enc.state())?;
    write_atomic(&out_path(config, MATCHER_TRACE), csv.as_bytes())?;
    Ok(match trace.last() {
        Some(l) => format!("{} epochs, final mean loss {l}", trace.len()),
        None => "0 epochs".to_owned(),
    })
}

pub fn cmd_calibrate(config: &RunConfig) -> Result<String> {
    let schema = config.load_schema()?;
    let dev = load_split(config, &schema, SplitName::Dev)?;
    let (enc, _) = trained_encoder(config, &schema)?;
    let report = calibrate_threshold(&build_matching_pairs(&dev), &enc, &schema, &config.calibration_grid)?;
    write_json(&out_path(config, CALIBRATION), &report)?;
    Ok(format!(
        "chosen delta {} (filter F1 {})",
        report.chosen,
        report.chosen_metrics().f1
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub counts: BTreeMap<TaskKind, u64>,
    pub total: u64,
    pub delta: f64,
    pub aux_fraction: f64,
    pub seed: u64,
}

pub fn cmd_build_dataset(config: &RunConfig) -> Result<String> {
    let schema = config.load_schema()?;
    let train = load_split(config, &schema, SplitName::Train)?;
    let (enc, _) = trained_encoder(config, &schema)?;
    let delta = effective_delta(config)?;
    let filtered = filtered_schemas(&enc, &train, delta)?;

    let mut samples = build_ner_samples(&train, Some(&filtered))?;
    samples.extend(build_auxiliary_samples(&train, config.aux_fraction, config.seed)?);
    if let Some(path) = &config.explanations {
        let records: Vec<ExplanationRecord> = read_jsonl(&config.resolve(path))?;
        samples.extend(merge_explanations(&train, &records, Some(&filtered))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    samples.shuffle(&mut rng);

    let mut counts: BTreeMap<TaskKind, u64> = BTreeMap::new();
    for s in &samples {
        *counts.entry(s.task).or_default() += 1;
    }
    let manifest = DatasetManifest {
        counts,
        total: samples.len() as u64,
        delta,
        aux_fraction: config.aux_fraction,
        seed: config.seed,
    };
    write_atomic(&out_path(config, DATASET), to_jsonl(&samples)?.as_bytes())?;
    write_json(&out_path(config, DATASET_MANIFEST), &manifest)?;
    Ok(format!("{} samples at delta {delta}", samples.len()))
}

pub fn cmd_train(config: &RunConfig) -> Result<String> {
    let schema = config.load_schema()?;
    let dataset_path = out_path(config, DATASET);
    let samples: Vec<PromptSample> = parse_jsonl(&read_to_string(&dataset_path)?, &dataset_path.display().to_string())?;
    let prepared = samples
        .into_iter()
        .map(|s| prepare_sample(s, &schema, config.cls_on_type_recognition))
        .collect::<Result<Vec<_>>>()?;
    let mut gen = generator(config, &schema)?;
    let state_path = out_path(config, GENERATOR_STATE);
    if config.resume && state_path.exists() {
        let state: MockGeneratorState<f64> = read_json(&state_path)?;
        gen.restore(state)?;
    }
    let params = GeneratorTraining {
        lambda: config.lambda,
        sign: config.sign(),
        scope: config.pooling_scope,
        batch_size: config.batch_size,
        epochs: config.epochs,
        seed: config.seed,
        reduction: config.batch_reduction,
        batch_mode: config.batch_mode,
        cls_on_type_recognition: config.cls_on_type_recognition,
    };
    let outcome = train_generator(&mut gen, &prepared, &schema, &params);
    write_atomic(&out_path(config, TRAIN_TRACE), outcome.to_csv().as_bytes())?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    write_json(&state_path, gen.state())?;
    Ok(match outcome.steps.last() {
        Some(r) => format!("{} steps, final total loss {}", outcome.steps.len(), r.total),
        None => "0 steps".to_owned(),
    })
}

/// Generator for inference. Echo-style mocks replay the split's gold
/// targets, and trained state is loaded when present.
fn inference_generator(config: &RunConfig, split: &CorpusSplit) -> Result<MockGenerator<f64>> {
    let mut gen = generator(config, &split.schema)?;
    for ex in &split.examples {
        gen.insert_gold(ex.sentence(), ex.mentions())?;
    }
    let state_path = out_path(config, GENERATOR_STATE);
    if state_path.exists() {
        let state: MockGeneratorState<f64> = read_json(&state_path)?;
        gen.restore(state)?;
    }
    Ok(gen)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub n_predictions: u64,
    pub parsed: u64,
    pub parse_rate: f64,
    pub filtered: bool,
    pub delta: Option<f64>,
}

pub fn cmd_predict(config: &RunConfig, split_name: SplitName) -> Result<String> {
    let schema = config.load_schema()?;
    let split = load_split(config, &schema, split_name)?;
    let gen = inference_generator(config, &split)?;
    let (enc, matcher_trained) = trained_encoder(config, &schema)?;
    let delta = matcher_trained.then(|| effective_delta(config)).transpose()?;
    let filtered = match delta {
        Some(d) => Some(filtered_schemas(&enc, &split, d)?),
        None => None,
    };

    let style = config.output_style;
    let mut predictions = Vec::with_capacity(split.examples.len());
    let mut parsed = 0u64;
    for ex in &split.examples {
        let prompt = match &filtered {
            Some(map) => build_filtered_prompt(&schema, ex.sentence(), &map[ex.id()])?,
            None => build_ner_prompt(&schema, ex.sentence()),
        };
        let output = gen.generate(&prompt, config.max_length)?;
        if !style.parse(&output, &schema).malformed {
            parsed += 1;
        }
        predictions.push(Prediction {
            id: ex.id().to_owned(),
            output,
        });
    }
    let n = predictions.len() as u64;
    let summary = PredictSummary {
        n_predictions: n,
        parsed,
        parse_rate: if n == 0 { 0.0 } else { parsed as f64 / n as f64 },
        filtered: filtered.is_some(),
        delta,
    };
    write_atomic(&out_path(config, &predictions_file(split_name)), to_jsonl(&predictions)?.as_bytes())?;
    write_json(&out_path(config, &predict_summary_file(split_name)), &summary)?;
    Ok(format!("{n} predictions, parse rate {}", summary.parse_rate))
}

pub fn cmd_eval(config: &RunConfig, split_name: SplitName, predictions: Option<&Path>) -> Result<String> {
    let schema = config.load_schema()?;
    let split = load_split(config, &schema, split_name)?;
    let path = match predictions {
        Some(p) => p.to_path_buf(),
        None => out_path(config, &predictions_file(split_name)),
    };
    let records: Vec<Prediction> = read_jsonl(&path)?;
    let known: HashSet<&str> = split.examples.iter().map(|e| e.id()).collect();
    let mut by_id = HashMap::with_capacity(records.len());
    for r in records {
        if !known.contains(r.id.as_str()) {
            return Err(TonerError::Referential(format!(
                "prediction for unknown example `{}` in {}",
                r.id,
                path.display()
            )));
        }
        let id = r.id.clone();
        if by_id.insert(r.id, r.output).is_some() {
            return Err(TonerError::Referential(format!("duplicate prediction for `{id}`")));
        }
    }
    let report: EvalReport<f64> = evaluate_dataset(&split, &by_id, &schema, &config.eval_options());
    let (json, text) = eval_files(split_name);
    write_json(&out_path(config, &json), &report)?;
    write_atomic(&out_path(config, &text), report.to_text().as_bytes())?;
    Ok(format!(
        "P {:.4} R {:.4} F1 {:.4}",
        report.precision, report.recall, report.f1
    ))
}

pub fn cmd_sweep(config: &RunConfig, split_name: SplitName, grid: &[f64]) -> Result<String> {
    if grid.is_empty() || grid.iter().any(|d| !(-1.0..=1.0).contains(d)) {
        return Err(TonerError::Config("sweep grid must be a nonempty list of values in [-1, 1]".into()));
    }
    let schema = config.load_schema()?;
    let split = load_split(config, &schema, split_name)?;
    let gen = inference_generator(config, &split)?;
    let (enc, _) = trained_encoder(config, &schema)?;
    let outcome = threshold_sweep(&split, &schema, &enc, &gen, grid, config.max_length, &config.eval_options());
    write_atomic(&out_path(config, &sweep_file(split_name)), outcome.to_csv().as_bytes())?;
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let best = outcome
        .rows
        .iter()
        .fold(None::<(f64, f64)>, |best, r| match best {
            Some((_, f)) if f >= r.report.f1 => best,
            _ => Some((r.delta, r.report.f1)),
        });
    Ok(match best {
        Some((d, f)) => format!("{} thresholds, best F1 {f:.4} at delta {d}", outcome.rows.len()),
        None => "no thresholds".to_owned(),
    })
}
