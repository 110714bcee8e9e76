//! Counterfactual negatives generated by a completion model.
//!
//! Each eligible training example is sent with an instruction asking for a
//! minimal edit that flips its label. Responses are cached per
//! `(example id, instruction, model, temperature, top_p)` and requests run
//! under a bounded thread pool; output order always matches input order.

pub mod cache;
pub mod client;
pub mod prompt;
pub mod stub;

use std::path::Path;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{detokenize, CorpusError, Dataset, LabeledExample, Task, TaskKind};
use crate::postag::{TaggedExample, TaggerError};
use crate::tagset::TagSetPartition;

pub use cache::{CacheKey, ResponseCache};
pub use client::{ChatRequest, ClientError, CompletionClient, HttpClient};
pub use prompt::{render_prompt, InstructionId, PromptTemplate};
pub use stub::StubClient;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("config error: {0}")]
    Config(String),
    #[error("example {id}: no counterfactual label for {label}")]
    NoFlip { id: String, label: String },
    #[error("example {id}: empty response from model")]
    EmptyResponse { id: String },
    #[error("example {id}: gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        id: String,
        attempts: usize,
        last: String,
    },
    #[error("{failed} of {eligible} generations failed (ceiling {ceiling})")]
    TooManyFailures {
        failed: usize,
        eligible: usize,
        ceiling: f64,
        /// Everything that did succeed, kept so a rerun only pays for the rest.
        partial: Box<NegativeBatch>,
    },
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Llm,
    Stub,
    HumanImport,
}

/// Label flips: binary tasks swap; NLI swaps entailment and contradiction
/// and leaves neutral without a counterfactual.
pub fn flip_map(task: &Task, source_label: usize) -> Option<usize> {
    match task.kind() {
        TaskKind::Sentiment | TaskKind::Sexism => match source_label {
            0 => Some(1),
            1 => Some(0),
            _ => None,
        },
        TaskKind::Nli => match source_label {
            0 => Some(2),
            2 => Some(0),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: usize,
    pub retry_base_delay_ms: u64,
    pub concurrency_limit: usize,
    pub timeout_secs: u64,
    /// Fraction of eligible examples allowed to fail before the run errors.
    pub max_failure_rate: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model_name: "gpt-4o-mini".into(),
            temperature: 0.1,
            top_p: 1.0,
            max_retries: 3,
            retry_base_delay_ms: 500,
            concurrency_limit: 8,
            timeout_secs: 60,
            max_failure_rate: 0.05,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GenerationError::Config(format!(
                "temperature must lie in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::Config(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.concurrency_limit == 0 {
            return Err(GenerationError::Config("concurrency_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualExample {
    pub source_id: String,
    pub text: String,
    pub text_b: Option<String>,
    pub label: usize,
    pub instruction_id: InstructionId,
    pub raw_response_hash: String,
    pub provenance: Provenance,
}

impl CounterfactualExample {
    pub fn to_example(&self) -> LabeledExample {
        LabeledExample {
            id: format!("{}-", self.source_id),
            text_a: self.text.clone(),
            text_b: self.text_b.clone(),
            label: self.label,
            explicit_id: true,
        }
    }
}

/// One line of the negatives JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub source_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub label: String,
    pub instruction_id: InstructionId,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub source_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeBatch {
    pub negatives: Vec<CounterfactualExample>,
    pub skipped: Vec<SkipRecord>,
    pub failures: Vec<SkipRecord>,
}

impl NegativeBatch {
    pub fn to_jsonl(&self, task: &Task) -> String {
        let mut out = String::new();
        for n in &self.negatives {
            let rec = NegativeRecord {
                source_id: n.source_id.clone(),
                text: n.text.clone(),
                text_b: n.text_b.clone(),
                label: task.labels()[n.label].clone(),
                instruction_id: n.instruction_id,
                provenance: n.provenance,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Skips and failures, one JSON object per line.
    pub fn skip_manifest(&self) -> String {
        let mut out = String::new();
        for (kind, recs) in [("skipped", &self.skipped), ("failed", &self.failures)] {
            for r in recs {
                let v = serde_json::json!({"source_id": r.source_id, "status": kind, "reason": r.reason});
                out.push_str(&v.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Reads a negatives JSONL file (generated or imported human counterfactuals).
pub fn parse_negatives(content: &str, task: &Task) -> Result<Vec<CounterfactualExample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NegativeRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let label = task.label_index(&rec.label).ok_or_else(|| CorpusError::UnknownLabel {
            line: i + 1,
            value: rec.label.clone(),
        })?;
        out.push(CounterfactualExample {
            raw_response_hash: response_hash(&rec.text),
            source_id: rec.source_id,
            text: rec.text,
            text_b: rec.text_b,
            label,
            instruction_id: rec.instruction_id,
            provenance: rec.provenance,
        });
    }
    Ok(out)
}

pub fn load_negatives(path: &Path, task: &Task) -> Result<Vec<CounterfactualExample>, CorpusError> {
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_negatives(&content, task)
}

fn response_hash(raw: &str) -> String {
    hex::encode(&Sha256::digest(raw.as_bytes())[..8])
}

/// Surface tokens whose tag is causal, first occurrence order, no duplicates.
pub fn extract_causal_words(tagged: &TaggedExample, partition: &TagSetPartition) -> Vec<String> {
    causal_words_in(tagged, partition, 0..tagged.tokens.len())
}

fn causal_words_in(
    tagged: &TaggedExample,
    partition: &TagSetPartition,
    range: std::ops::Range<usize>,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for i in range {
        let tok = &tagged.tokens[i];
        if partition.is_causal(tagged.tags[i]) && !out.contains(tok) {
            out.push(tok.clone());
        }
    }
    out
}

/// Causal words offered to the model: the whole sentence, or only the
/// hypothesis for NLI since only the hypothesis is edited.
pub fn prompt_causal_words(tagged: &TaggedExample, partition: &TagSetPartition) -> Vec<String> {
    if tagged.example.text_b.is_some() {
        causal_words_in(tagged, partition, tagged.segment_len..tagged.tokens.len())
    } else {
        extract_causal_words(tagged, partition)
    }
}

fn call_with_retries(
    client: &dyn CompletionClient,
    request: &ChatRequest,
    cfg: &GenerationConfig,
    id: &str,
) -> Result<String, GenerationError> {
    let attempts = cfg.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        match client.complete(request) {
            Ok(r) => return Ok(r),
            Err(e) => last = e.to_string(),
        }
        if attempt + 1 < attempts && cfg.retry_base_delay_ms > 0 {
            thread::sleep(Duration::from_millis(cfg.retry_base_delay_ms << attempt.min(16)));
        }
    }
    Err(GenerationError::RetriesExhausted {
        id: id.to_string(),
        attempts,
        last,
    })
}

/// Generates one counterfactual for `example` under `tpl`.
pub fn generate_negative(
    example: &LabeledExample,
    tpl: &PromptTemplate,
    causal_words: &[String],
    cfg: &GenerationConfig,
    client: &dyn CompletionClient,
    cache: Option<&ResponseCache>,
) -> Result<CounterfactualExample, GenerationError> {
    if flip_map(&tpl.task, example.label) != Some(tpl.target_label) || tpl.source_label != example.label {
        return Err(GenerationError::NoFlip {
            id: example.id.clone(),
            label: tpl.task.labels()[example.label].clone(),
        });
    }
    let prompt = render_prompt(tpl, example, causal_words)?;
    let key = CacheKey {
        example_id: example.id.clone(),
        instruction_id: tpl.instruction_id,
        model_name: cfg.model_name.clone(),
        temperature: cfg.temperature,
        top_p: cfg.top_p,
    };
    let raw = match cache.and_then(|c| c.get(&key, &prompt)) {
        Some(hit) => hit,
        None => {
            let request = ChatRequest::user(&cfg.model_name, &prompt, cfg.temperature, cfg.top_p);
            let raw = call_with_retries(client, &request, cfg, &example.id)?;
            if let Some(c) = cache {
                c.put(&key, &prompt, &raw)?;
            }
            raw
        }
    };
    let text = client::clean_response(&raw);
    if text.is_empty() {
        return Err(GenerationError::EmptyResponse { id: example.id.clone() });
    }
    let (text_a, text_b) = match &example.text_b {
        Some(_) => (example.text_a.clone(), Some(text)),
        None => (text, None),
    };
    Ok(CounterfactualExample {
        source_id: example.id.clone(),
        text: text_a,
        text_b,
        label: tpl.target_label,
        instruction_id: tpl.instruction_id,
        raw_response_hash: response_hash(&raw),
        provenance: client.provenance(),
    })
}

/// Generates negatives for every example with a label flip.
///
/// `tagged` must align with `train.examples`. Failures are collected; the
/// call only errors when the failure rate exceeds `cfg.max_failure_rate`,
/// in which case the partial batch travels inside the error.
pub fn generate_negatives(
    train: &Dataset,
    tagged: &[TaggedExample],
    partition: &TagSetPartition,
    instruction: InstructionId,
    cfg: &GenerationConfig,
    client: &dyn CompletionClient,
    cache: Option<&ResponseCache>,
) -> Result<NegativeBatch, GenerationError> {
    cfg.validate()?;
    if tagged.len() != train.len() {
        return Err(GenerationError::Config("tagged examples do not align with dataset".into()));
    }
    let mut batch = NegativeBatch::default();
    let mut jobs = Vec::new();
    for (ex, t) in train.examples.iter().zip(tagged) {
        match PromptTemplate::new(instruction, &train.task, ex.label) {
            Some(tpl) => jobs.push((ex, t, tpl)),
            None => batch.skipped.push(SkipRecord {
                source_id: ex.id.clone(),
                reason: format!("label {} has no counterfactual flip", train.task.labels()[ex.label]),
            }),
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency_limit)
        .build()
        .map_err(|e| GenerationError::Config(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(ex, t, tpl)| {
                let words = prompt_causal_words(t, partition);
                generate_negative(ex, tpl, &words, cfg, client, cache)
            })
            .collect()
    });
    let eligible = jobs.len();
    for ((ex, _, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(n) => batch.negatives.push(n),
            Err(e) => batch.failures.push(SkipRecord {
                source_id: ex.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let failed = batch.failures.len();
    if eligible > 0 && failed as f64 / eligible as f64 > cfg.max_failure_rate {
        return Err(GenerationError::TooManyFailures {
            failed,
            eligible,
            ceiling: cfg.max_failure_rate,
            partial: Box::new(batch),
        });
    }
    Ok(batch)
}

/// Joins a counterfactual's text the way encoders see it.
pub fn counterfactual_text(cf: &CounterfactualExample) -> String {
    match &cf.text_b {
        Some(b) => detokenize(&[cf.text.as_str(), b.as_str()]),
        None => cf.text.clone(),
    }
}
