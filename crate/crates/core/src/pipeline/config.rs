//! Run configuration: a flat TOML document with typed keys. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::mock::GeneratorMode;
use crate::backend::PoolingScope;
use crate::error::{Result, TonerError};
use crate::ingest::{BioOptions, SplitName};
use crate::io::read_to_string;
use crate::metrics::{DedupePolicy, EvalOptions, OutputStyle};
use crate::objectives::SignConvention;
use crate::training::{BatchMode, BatchReduction};
use crate::types::TypeSchema;

/// Environment variable that overrides the `backend` key.
pub const BACKEND_ENV: &str = "TONER_BACKEND";

/// Registry of selectable generator backends.
pub const BACKENDS: [(&str, GeneratorMode); 4] = [
    ("mock-echo", GeneratorMode::Echo),
    ("mock-strict-echo", GeneratorMode::StrictEcho),
    ("mock-fallback", GeneratorMode::Fallback),
    ("mock-type-aware", GeneratorMode::TypeAware),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON array of `{tag, display_name, description}`; the built-in CoNLL
    /// 2003 schema when absent.
    pub schema: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// JSON-lines `{example_id, explanation}` records for the train split.
    pub explanations: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub tag_column: Option<usize>,
    pub strict_bio: bool,

    pub lambda: f64,
    pub tau: f64,
    pub delta: f64,
    pub max_length: usize,
    pub aux_fraction: f64,
    pub standard_sign: bool,

    pub seed: u64,
    pub backend: String,
    pub backend_seed: u64,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batch_reduction: BatchReduction,
    pub batch_mode: BatchMode,
    pub cls_on_type_recognition: bool,
    pub pooling_scope: PoolingScope,
    pub decoding: String,
    /// Continue from saved backend state instead of starting fresh.
    pub resume: bool,

    pub matcher_learning_rate: f64,
    pub matcher_epochs: usize,
    pub matcher_batch_size: usize,
    pub calibration_grid: Vec<f64>,

    pub dedupe: DedupePolicy,
    pub output_style: OutputStyle,

    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: None,
            train: None,
            dev: None,
            test: None,
            explanations: None,
            out_dir: PathBuf::from("out"),
            tag_column: None,
            strict_bio: false,
            lambda: 0.1,
            tau: 0.05,
            delta: 0.8,
            max_length: 512,
            aux_fraction: 0.2,
            standard_sign: false,
            seed: 42,
            backend: "mock-echo".into(),
            backend_seed: 7,
            embedding_dim: 16,
            learning_rate: 3e-5,
            batch_size: 32,
            epochs: 1,
            batch_reduction: BatchReduction::Mean,
            batch_mode: BatchMode::Mixed,
            cls_on_type_recognition: false,
            pooling_scope: PoolingScope::Full,
            decoding: "greedy".into(),
            resume: false,
            matcher_learning_rate: 8e-6,
            matcher_epochs: 1,
            matcher_batch_size: 32,
            calibration_grid: (-10..=10).map(|i| i as f64 / 10.0).collect(),
            dedupe: DedupePolicy::Multiset,
            output_style: OutputStyle::Mentions,
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| TonerError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file and applies the backend environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| TonerError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut config = Self::from_toml(&text, base).map_err(|e| match e {
            TonerError::Config(m) => TonerError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Ok(backend) = std::env::var(BACKEND_ENV) {
            config.backend = backend;
            config.validate()?;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TonerError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return fail(format!("delta must lie in [-1, 1], got {}", self.delta));
        }
        if self.max_length == 0 {
            return fail("max_length must be >= 1".into());
        }
        if !(self.aux_fraction > 0.0 && self.aux_fraction <= 1.0) {
            return fail(format!("aux_fraction must lie in (0, 1], got {}", self.aux_fraction));
        }
        if self.embedding_dim == 0 || self.batch_size == 0 || self.matcher_batch_size == 0 {
            return fail("embedding_dim, batch_size and matcher_batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.matcher_learning_rate > 0.0) {
            return fail("learning rates must be > 0".into());
        }
        if self.calibration_grid.is_empty() || self.calibration_grid.iter().any(|d| !(-1.0..=1.0).contains(d)) {
            return fail("calibration_grid must be a nonempty list of values in [-1, 1]".into());
        }
        if self.decoding != "greedy" {
            return fail(format!("unsupported decoding `{}` (only `greedy`)", self.decoding));
        }
        self.generator_mode()?;
        Ok(())
    }

    pub fn generator_mode(&self) -> Result<GeneratorMode> {
        BACKENDS
            .iter()
            .find(|(name, _)| *name == self.backend)
            .map(|(_, mode)| *mode)
            .ok_or_else(|| {
                let names: Vec<&str> = BACKENDS.iter().map(|(n, _)| *n).collect();
                TonerError::Config(format!("unknown backend `{}` (known: {})", self.backend, names.join(", ")))
            })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        self.out_dir = dir;
    }

    pub fn split_path(&self, split: SplitName) -> Option<PathBuf> {
        let p = match split {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        };
        p.as_deref().map(|p| self.resolve(p))
    }

    pub fn load_schema(&self) -> Result<TypeSchema> {
        match &self.schema {
            None => Ok(TypeSchema::conll2003()),
            Some(p) => crate::io::read_json(&self.resolve(p)),
        }
    }

    pub fn bio_options(&self) -> BioOptions {
        BioOptions {
            tag_column: self.tag_column,
            strict: self.strict_bio,
        }
    }

    pub fn sign(&self) -> SignConvention {
        SignConvention::from_flag(self.standard_sign)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            dedupe: self.dedupe,
            style: self.output_style,
            fingerprint: None,
        }
    }
}
