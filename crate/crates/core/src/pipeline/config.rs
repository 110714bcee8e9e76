//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Task, TaskKind};
use crate::loss::LossConfig;
use crate::negative::prompt::InstructionId;
use crate::negative::GenerationConfig;
use crate::positive::{DEFAULT_SCALING_FACTOR, DEFAULT_UNK};
use crate::tagset::DEFAULT_THRESHOLD;
use crate::train::TrainingConfig;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub tagger: TaggerConfig,
    #[serde(default)]
    pub tags: TagsConfig,
    #[serde(default)]
    pub positive: PositiveConfig,
    #[serde(default)]
    pub negative: NegativeConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub cad: CadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    /// Without a validation file, a fraction of train is held out.
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Test split name → JSONL path.
    #[serde(default)]
    pub tests: BTreeMap<String, PathBuf>,
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaggerKind {
    /// Built-in English lexicon with suffix rules, plus an optional user lexicon.
    #[default]
    Heuristic,
    /// Only the user lexicon; unknown words fall back to NOUN.
    Lexicon,
    /// A subprocess speaking one token / one tag per line.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TaggerConfig {
    #[serde(default)]
    pub kind: TaggerKind,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagsConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// A fine-tuned classifier checkpoint used as the ablation oracle.
    #[serde(default)]
    pub oracle_checkpoint: Option<PathBuf>,
    /// Train a CE-only oracle on the training split when no checkpoint is given.
    #[serde(default)]
    pub train_oracle: bool,
    #[serde(default)]
    pub oracle_seed: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

impl Default for TagsConfig {
    fn default() -> Self {
        TagsConfig {
            threshold: DEFAULT_THRESHOLD,
            oracle_checkpoint: None,
            train_oracle: false,
            oracle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositiveConfig {
    #[serde(default = "default_scaling")]
    pub scaling_factor: f64,
    #[serde(default)]
    pub k_override: Option<usize>,
    #[serde(default = "default_unk")]
    pub unk_token: String,
}

fn default_scaling() -> f64 {
    DEFAULT_SCALING_FACTOR
}

fn default_unk() -> String {
    DEFAULT_UNK.to_string()
}

impl Default for PositiveConfig {
    fn default() -> Self {
        PositiveConfig {
            scaling_factor: DEFAULT_SCALING_FACTOR,
            k_override: None,
            unk_token: DEFAULT_UNK.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    /// Offline antonym flipper.
    #[default]
    Stub,
    /// OpenAI-compatible chat completions endpoint (SALAD_API_KEY, SALAD_API_BASE).
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeConfig {
    #[serde(default)]
    pub instruction: InstructionId,
    #[serde(default)]
    pub client: ClientKind,
    #[serde(default)]
    pub antonyms: Option<PathBuf>,
    /// Response cache for the HTTP client; kept apart from stage artifacts.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, flatten)]
    pub generation: GenerationConfig,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig {
            instruction: InstructionId::I4,
            client: ClientKind::Stub,
            antonyms: None,
            cache_dir: None,
            generation: GenerationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CadEmbedderKind {
    /// Hashed token vectors, greedy token matching.
    #[default]
    HashingTokens,
    HashingPooled,
    /// Pooled representation of the first trained checkpoint.
    EncoderPooled,
    /// Static token embeddings of the first trained checkpoint.
    EncoderTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CadConfig {
    #[serde(default)]
    pub embedder: CadEmbedderKind,
    #[serde(default)]
    pub per_pair: bool,
}

impl RunConfig {
    pub fn task(&self) -> Task {
        Task::new(self.task)
    }

    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(content: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(content).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let content = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&content, base)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.train);
        if let Some(p) = &mut self.data.validation {
            fix(p);
        }
        for p in self.data.tests.values_mut() {
            fix(p);
        }
        for p in [
            &mut self.tagger.lexicon,
            &mut self.tags.oracle_checkpoint,
            &mut self.negative.antonyms,
            &mut self.negative.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return bad(format!("data.val_fraction must lie in (0, 1), got {}", self.data.val_fraction));
        }
        if !(self.positive.scaling_factor > 0.0) {
            return bad(format!("positive.scaling_factor must be positive, got {}", self.positive.scaling_factor));
        }
        if self.tagger.kind == TaggerKind::Lexicon && self.tagger.lexicon.is_none() {
            return bad("tagger.kind = \"lexicon\" needs tagger.lexicon".into());
        }
        if self.tagger.kind == TaggerKind::External && self.tagger.program.is_none() {
            return bad("tagger.kind = \"external\" needs tagger.program".into());
        }
        if self.negative.client == ClientKind::Stub && self.negative.antonyms.is_none() {
            return bad("negative.client = \"stub\" needs negative.antonyms".into());
        }
        self.loss.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.training.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.negative
            .generation
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    /// Paths a command reads directly from the config; each must exist.
    pub fn check_paths<'a>(&self, paths: impl IntoIterator<Item = &'a Path>) -> Result<(), PipelineError> {
        for p in paths {
            if !p.exists() {
                return Err(PipelineError::MissingInput(p.to_path_buf()));
            }
        }
        Ok(())
    }
}
