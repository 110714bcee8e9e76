//! Python bindings for `salad-core`.
//!
//! Structured results (reports, artifacts) cross the boundary as plain
//! dicts built from their JSON form.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use salad_core::cad;
use salad_core::corpus::{self, Dataset, LabeledExample, Split, Task, TaskKind};
use salad_core::loss::{self, Distance, LossConfig, TripletMode};
use salad_core::negative::prompt::InstructionId;
use salad_core::negative::stub::StubClient;
use salad_core::negative::{CounterfactualExample, Provenance};
use salad_core::pipeline::{self, RunConfig};
use salad_core::positive;
use salad_core::postag::{HeuristicTagger, LexiconTagger, Tagger, UniversalTag};
use salad_core::tagset::{self, ClassifierOracle, OracleError, TagSetPartition};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn parse_task(name: &str) -> PyResult<Task> {
    let kind: TaskKind = serde_json::from_value(serde_json::Value::String(name.to_lowercase()))
        .map_err(|_| value_err(format!("unknown task {name:?}, expected sentiment, sexism or nli")))?;
    Ok(Task::new(kind))
}

fn parse_tags(names: &[String]) -> PyResult<Vec<UniversalTag>> {
    names.iter().map(|n| n.parse::<UniversalTag>().map_err(value_err)).collect()
}

fn dataset(task: &Task, texts: &[String], labels: &[usize]) -> PyResult<Dataset> {
    if texts.len() != labels.len() {
        return Err(value_err(format!("{} texts but {} labels", texts.len(), labels.len())));
    }
    let examples = texts
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (t, l))| LabeledExample::new(format!("ex{i}"), t.as_str(), *l))
        .collect();
    Dataset::new("python", task.clone(), Split::Train, examples).map_err(value_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(value_err("ragged matrix"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(value_err)
}

/// Splits text into the toolkit's tokens.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// `max(1, round(mean_noncausal * scaling_factor))`.
#[pyfunction]
#[pyo3(signature = (mean_noncausal, scaling_factor = positive::DEFAULT_SCALING_FACTOR))]
fn k_from_mean(mean_noncausal: f64, scaling_factor: f64) -> usize {
    positive::k_from_mean(mean_noncausal, scaling_factor)
}

#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    loss::cross_entropy(matrix(logits)?.view(), &labels).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (anchors, positives, negatives, margin = 1.0, distance = "euclidean", mode = "batch_mean"))]
fn triplet_loss(
    anchors: Vec<Vec<f64>>,
    positives: Vec<Vec<f64>>,
    negatives: Vec<Vec<f64>>,
    margin: f64,
    distance: &str,
    mode: &str,
) -> PyResult<f64> {
    let distance = match distance {
        "euclidean" => Distance::Euclidean,
        "cosine" => Distance::CosineDistance,
        other => return Err(value_err(format!("distance must be euclidean or cosine, got {other:?}"))),
    };
    let triplet_mode = match mode {
        "batch_mean" => TripletMode::BatchMeanHinge,
        "per_example" => TripletMode::PerExampleHinge,
        other => return Err(value_err(format!("mode must be batch_mean or per_example, got {other:?}"))),
    };
    let cfg = LossConfig {
        margin,
        distance,
        triplet_mode,
        ..LossConfig::default()
    };
    let (a, p, n) = (matrix(anchors)?, matrix(positives)?, matrix(negatives)?);
    loss::triplet_loss(a.view(), p.view(), n.view(), &cfg).map_err(value_err)
}

#[pyfunction]
fn combined_loss(ce: f64, cl: f64, lam: f64) -> PyResult<f64> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(value_err(format!("lambda must lie in [0, 1], got {lam}")));
    }
    Ok(loss::combined_loss(ce, cl, lam))
}

/// Unweighted mean of split accuracies per run.
#[pyfunction]
fn aggregate_overall(rows: BTreeMap<String, BTreeMap<String, f64>>) -> PyResult<BTreeMap<String, f64>> {
    salad_core::eval::aggregate_overall(&rows).map_err(value_err)
}

/// Lexicon or built-in heuristic part-of-speech tagger.
#[pyclass(name = "Tagger", frozen)]
struct PyTagger {
    inner: Box<dyn Tagger>,
}

#[pymethods]
impl PyTagger {
    /// With `lexicon_tsv`, tags from `token<TAB>TAG` lines (unknown words
    /// become NOUN); otherwise uses the built-in English heuristics.
    #[new]
    #[pyo3(signature = (lexicon_tsv = None))]
    fn new(lexicon_tsv: Option<&str>) -> PyResult<Self> {
        let inner: Box<dyn Tagger> = match lexicon_tsv {
            Some(tsv) => Box::new(LexiconTagger::from_tsv(tsv, UniversalTag::Noun).map_err(value_err)?),
            None => Box::new(HeuristicTagger::default()),
        };
        Ok(PyTagger { inner })
    }

    /// `(token, tag)` pairs.
    fn tag(&self, text: &str) -> PyResult<Vec<(String, String)>> {
        let tokens = corpus::tokenize(text);
        let tags = self.inner.tag_tokens(&tokens).map_err(runtime_err)?;
        Ok(tokens.into_iter().zip(tags.into_iter().map(|t| t.as_str().to_string())).collect())
    }
}

struct CallableOracle(Py<PyAny>);

impl ClassifierOracle for CallableOracle {
    fn predict(&self, ex: &LabeledExample) -> Result<usize, OracleError> {
        Python::attach(|py| {
            self.0
                .call1(py, (ex.joined_text(),))
                .and_then(|r| r.extract::<usize>(py))
                .map_err(|e| OracleError(e.to_string()))
        })
    }
}

/// Ablation importance of every tag. `oracle` maps a text to a label index.
#[pyfunction]
#[pyo3(signature = (texts, labels, oracle, tagger, threshold = tagset::DEFAULT_THRESHOLD, task = "sentiment"))]
fn discover_tags<'py>(
    py: Python<'py>,
    texts: Vec<String>,
    labels: Vec<usize>,
    oracle: Py<PyAny>,
    tagger: &PyTagger,
    threshold: f64,
    task: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let ds = dataset(&parse_task(task)?, &texts, &labels)?;
    let oracle = CallableOracle(oracle);
    let tagger = &*tagger.inner;
    let report = py
        .detach(|| tagset::score_tags(&ds, &oracle, tagger))
        .map_err(runtime_err)?;
    let partition = tagset::partition_tags(&report, threshold);
    to_py(py, &tagset::TagDiscoveryArtifact::new(&report, &partition))
}

/// Structure-aware positives: `k` non-causal tokens per text replaced by
/// `unk_token`, drawn from the `(seed, epoch)` stream.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (texts, tagger, causal_tags, k, seed = 0, epoch = 0, unk_token = positive::DEFAULT_UNK))]
fn generate_positives<'py>(
    py: Python<'py>,
    texts: Vec<String>,
    tagger: &PyTagger,
    causal_tags: Vec<String>,
    k: usize,
    seed: u64,
    epoch: usize,
    unk_token: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let labels = vec![0; texts.len()];
    let ds = dataset(&Task::sentiment(), &texts, &labels)?;
    let partition = TagSetPartition::from_causal(parse_tags(&causal_tags)?, tagset::DEFAULT_THRESHOLD);
    let tagged = positive::tag_all(&ds, &*tagger.inner).map_err(runtime_err)?;
    let out = positive::generate_epoch_positives(&tagged, &partition, k, unk_token, epoch, seed);
    to_py(py, &out)
}

/// Offline counterfactual writer: swaps words through an antonym table.
#[pyclass(name = "StubClient", frozen)]
struct PyStubClient {
    inner: StubClient,
}

#[pymethods]
impl PyStubClient {
    #[new]
    fn new(pairs: Vec<(String, String)>) -> Self {
        PyStubClient {
            inner: StubClient::new(pairs),
        }
    }

    #[pyo3(signature = (text, causal_words = None))]
    fn flip(&self, text: &str, causal_words: Option<Vec<String>>) -> String {
        self.inner.flip(text, causal_words.as_deref())
    }
}

/// Diversity, overlap and similarity of `counterfactuals[i]` against
/// `originals[i]`, using hashed token vectors.
#[pyfunction]
#[pyo3(signature = (originals, counterfactuals, pooled = false))]
fn cad_quality<'py>(
    py: Python<'py>,
    originals: Vec<String>,
    counterfactuals: Vec<String>,
    pooled: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let labels = vec![0; originals.len()];
    let train = dataset(&Task::sentiment(), &originals, &labels)?;
    if counterfactuals.len() != originals.len() {
        return Err(value_err("originals and counterfactuals differ in length"));
    }
    let cad: Vec<CounterfactualExample> = train
        .examples
        .iter()
        .zip(&counterfactuals)
        .map(|(src, text)| CounterfactualExample {
            source_id: src.id.clone(),
            text: text.clone(),
            text_b: None,
            label: 1,
            instruction_id: InstructionId::I4,
            raw_response_hash: String::new(),
            provenance: Provenance::HumanImport,
        })
        .collect();
    let hashing = cad::HashingEmbedder::default();
    let embedder = if pooled {
        cad::Embedder::Pooled(&hashing)
    } else {
        cad::Embedder::TokenMatching(&hashing)
    };
    let report = cad::cad_quality(&train, &cad, &embedder, true).map_err(runtime_err)?;
    to_py(py, &report)
}

/// The staged, file-based pipeline driven by a TOML config.
#[pyclass(name = "Pipeline")]
struct PyPipeline {
    inner: pipeline::Pipeline,
}

#[pymethods]
impl PyPipeline {
    #[new]
    #[pyo3(signature = (config, output_dir = None, strict = false))]
    fn new(config: PathBuf, output_dir: Option<PathBuf>, strict: bool) -> PyResult<Self> {
        let mut cfg = RunConfig::load(&config).map_err(value_err)?;
        if let Some(dir) = output_dir {
            cfg.output_dir = dir;
        }
        Ok(PyPipeline {
            inner: pipeline::Pipeline::new(cfg, strict),
        })
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.cfg.output_dir.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    #[pyo3(signature = (train_oracle = false))]
    fn discover_tags<'py>(&mut self, py: Python<'py>, train_oracle: bool) -> PyResult<Bound<'py, PyAny>> {
        let out = py.detach(|| self.inner.discover_tags(train_oracle)).map_err(runtime_err)?;
        to_py(py, &out.json)
    }

    fn gen_pos<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let out = py.detach(|| self.inner.gen_pos()).map_err(runtime_err)?;
        to_py(py, &out.json)
    }

    #[pyo3(signature = (instruction = None))]
    fn gen_neg<'py>(&mut self, py: Python<'py>, instruction: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let id = self.instruction(instruction)?;
        let out = py.detach(|| self.inner.gen_neg(id)).map_err(runtime_err)?;
        to_py(py, &out.json)
    }

    #[pyo3(signature = (lam = None))]
    fn train<'py>(&mut self, py: Python<'py>, lam: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        if let Some(l) = lam {
            self.inner.cfg.loss.lambda = l;
            self.inner.cfg.validate().map_err(value_err)?;
        }
        let out = py.detach(|| self.inner.train()).map_err(runtime_err)?;
        to_py(py, &out.json)
    }

    fn eval<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let out = py.detach(|| self.inner.eval()).map_err(runtime_err)?;
        to_py(py, &out.json)
    }

    #[pyo3(signature = (instruction = None))]
    fn cad_quality<'py>(&mut self, py: Python<'py>, instruction: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let id = self.instruction(instruction)?;
        let out = py.detach(|| self.inner.cad_quality(id)).map_err(runtime_err)?;
        to_py(py, &out.json)
    }
}

impl PyPipeline {
    fn instruction(&self, s: Option<&str>) -> PyResult<InstructionId> {
        match s {
            Some(s) => s.parse().map_err(value_err),
            None => Ok(self.inner.cfg.negative.instruction),
        }
    }
}

#[pymodule]
fn salad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(k_from_mean, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_overall, m)?)?;
    m.add_function(wrap_pyfunction!(discover_tags, m)?)?;
    m.add_function(wrap_pyfunction!(generate_positives, m)?)?;
    m.add_function(wrap_pyfunction!(cad_quality, m)?)?;
    m.add_class::<PyTagger>()?;
    m.add_class::<PyStubClient>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
