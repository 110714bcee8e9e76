//! Dataset model, task definitions, tokenization and JSONL I/O.
//!
//! Every pipeline stage works on [`Dataset`]s of [`LabeledExample`]s. NLI
//! examples carry the premise in `text_a` and the hypothesis in `text_b`;
//! anything that operates on tokens sees premise tokens followed by
//! hypothesis tokens.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown label at line {line}: {value:?}")]
    UnknownLabel { line: usize, value: String },
    #[error("line {line}: NLI example is missing text_b")]
    MissingTextB { line: usize },
    #[error("line {line}: text_b is only allowed for NLI")]
    UnexpectedTextB { line: usize },
    #[error("line {line}: text is empty")]
    EmptyText { line: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sentiment,
    Sexism,
    Nli,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Sentiment => "sentiment",
            TaskKind::Sexism => "sexism",
            TaskKind::Nli => "nli",
        })
    }
}

/// A classification task and its ordered label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    kind: TaskKind,
    labels: Vec<String>,
}

impl Task {
    pub fn new(kind: TaskKind) -> Self {
        let labels: &[&str] = match kind {
            TaskKind::Sentiment => &["negative", "positive"],
            TaskKind::Sexism => &["non-sexist", "sexist"],
            TaskKind::Nli => &["entailment", "neutral", "contradiction"],
        };
        Task {
            kind,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn sentiment() -> Self {
        Self::new(TaskKind::Sentiment)
    }

    pub fn sexism() -> Self {
        Self::new(TaskKind::Sexism)
    }

    pub fn nli() -> Self {
        Self::new(TaskKind::Nli)
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn is_pair_task(&self) -> bool {
        self.kind == TaskKind::Nli
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    /// Case-insensitive label lookup.
    pub fn label_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.labels.iter().position(|l| l.eq_ignore_ascii_case(name))
    }
}

impl Serialize for Task {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.kind.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        TaskKind::deserialize(d).map(Task::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    OTest,
    CfTest,
    Odd,
    CrossDomain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: usize,
    /// Whether the id came from the input file (false for content-hash ids).
    pub explicit_id: bool,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text_a: impl Into<String>, label: usize) -> Self {
        LabeledExample {
            id: id.into(),
            text_a: text_a.into(),
            text_b: None,
            label,
            explicit_id: true,
        }
    }

    pub fn pair(
        id: impl Into<String>,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        label: usize,
    ) -> Self {
        LabeledExample {
            text_b: Some(hypothesis.into()),
            ..Self::new(id, premise, label)
        }
    }

    /// Premise tokens followed by hypothesis tokens.
    pub fn tokens(&self) -> Vec<String> {
        let mut toks = tokenize(&self.text_a);
        if let Some(b) = &self.text_b {
            toks.extend(tokenize(b));
        }
        toks
    }

    /// Number of tokens belonging to `text_a`.
    pub fn segment_len(&self) -> usize {
        tokenize(&self.text_a).len()
    }

    /// Full text as seen by an encoder: premise and hypothesis joined by a space.
    pub fn joined_text(&self) -> String {
        match &self.text_b {
            Some(b) => format!("{} {}", self.text_a, b),
            None => self.text_a.clone(),
        }
    }

    fn validate(&self, task: &Task, line: usize) -> Result<(), CorpusError> {
        if self.text_a.trim().is_empty() {
            return Err(CorpusError::EmptyText { line });
        }
        match (&self.text_b, task.is_pair_task()) {
            (None, true) => return Err(CorpusError::MissingTextB { line }),
            (Some(_), false) => return Err(CorpusError::UnexpectedTextB { line }),
            (Some(b), true) if b.trim().is_empty() => return Err(CorpusError::EmptyText { line }),
            _ => {}
        }
        if self.label >= task.num_labels() {
            return Err(CorpusError::UnknownLabel {
                line,
                value: self.label.to_string(),
            });
        }
        Ok(())
    }
}

/// One JSONL record as it appears on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub split: Split,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and per-example invariants.
    pub fn new(
        name: impl Into<String>,
        task: Task,
        split: Split,
        examples: Vec<LabeledExample>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, ex) in examples.iter().enumerate() {
            ex.validate(&task, i + 1)?;
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: ex.id.clone(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            task,
            split,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn to_records(&self) -> Vec<ExampleRecord> {
        self.examples
            .iter()
            .map(|e| ExampleRecord {
                id: e.explicit_id.then(|| e.id.clone()),
                text: e.text_a.clone(),
                text_b: e.text_b.clone(),
                label: self.task.labels()[e.label].clone(),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.to_records() {
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }
}

/// Stable id derived from content; used when the input omits one.
pub fn content_id(text_a: &str, text_b: Option<&str>, label: &str) -> String {
    let mut h = Sha256::new();
    h.update(text_a.as_bytes());
    h.update([0u8]);
    if let Some(b) = text_b {
        h.update(b.as_bytes());
    }
    h.update([0u8]);
    h.update(label.to_ascii_lowercase().as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn parse_jsonl(
    content: &str,
    name: &str,
    task: &Task,
    split: Split,
) -> Result<Dataset, CorpusError> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let label = task
            .label_index(&rec.label)
            .ok_or_else(|| CorpusError::UnknownLabel {
                line,
                value: rec.label.clone(),
            })?;
        let explicit_id = rec.id.is_some();
        let mut id = match rec.id {
            Some(id) => id,
            None => content_id(&rec.text, rec.text_b.as_deref(), &rec.label),
        };
        if !explicit_id {
            // identical content on several lines: disambiguate by occurrence
            let base = id.clone();
            let mut n = 2;
            while seen.contains(&id) {
                id = format!("{base}-{n}");
                n += 1;
            }
        }
        let ex = LabeledExample {
            id,
            text_a: rec.text,
            text_b: rec.text_b,
            label,
            explicit_id,
        };
        ex.validate(task, line)?;
        if !seen.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: ex.id });
        }
        examples.push(ex);
    }
    Ok(Dataset {
        name: name.to_string(),
        task: task.clone(),
        split,
        examples,
    })
}

/// Reads a JSONL dataset file. Input order is preserved.
pub fn load_dataset(path: &Path, task: &Task, split: Split) -> Result<Dataset, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut content = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        content.push_str(&line);
        content.push('\n');
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_jsonl(&content, &name, task, split)
}

/// Splits a training set into (train, validation) partitions.
///
/// The validation size is `round(n * val_fraction)` clamped to `[1, n - 1]`.
/// Both partitions keep the input order.
pub fn split_train_val(
    ds: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CorpusError::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if ds.split != Split::Train {
        return Err(CorpusError::Config(format!(
            "can only split a training set, got {:?}",
            ds.split
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(CorpusError::Config(format!(
            "need at least 2 examples to split, got {n}"
        )));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (ex, v) in ds.examples.iter().zip(is_val) {
        if v {
            val.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    Ok((
        Dataset {
            name: ds.name.clone(),
            task: ds.task.clone(),
            split: Split::Train,
            examples: train,
        },
        Dataset {
            name: format!("{}-val", ds.name),
            task: ds.task.clone(),
            split: Split::Validation,
            examples: val,
        },
    ))
}

/// Lowercasing word tokenizer.
///
/// Rules, applied per whitespace-separated chunk:
/// - bracketed upper-case markers such as `[UNK]` are kept verbatim;
/// - runs of alphanumeric characters form word tokens;
/// - an apostrophe between letters starts a clitic token (`it's` gives
///   `it`, `'s`); `n't` is split Penn-style (`don't` gives `do`, `n't`);
/// - every other character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

fn is_marker(chars: &[char]) -> Option<usize> {
    if chars.first() != Some(&'[') {
        return None;
    }
    let end = chars.iter().position(|&c| c == ']')?;
    let inner = &chars[1..end];
    (!inner.is_empty() && inner.iter().all(|c| c.is_ascii_uppercase() || *c == '_')).then_some(end + 1)
}

const CLITICS: [&str; 7] = ["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    let lower = chunk.to_lowercase();
    if CLITICS.contains(&lower.as_str()) {
        out.push(lower);
        return;
    }
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if let Some(len) = is_marker(&chars[i..]) {
            out.push(chars[i..i + len].iter().collect());
            i += len;
            continue;
        }
        let c = chars[i];
        if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
            out.push(word);
        } else if (c == '\'' || c == '’')
            && i > 0
            && chars[i - 1].is_alphabetic()
            && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
        {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && chars[end].is_alphabetic() {
                end += 1;
            }
            let clitic: String = chars[start..end].iter().collect::<String>().to_lowercase();
            if clitic == "t" {
                if let Some(prev) = out.last_mut() {
                    if prev.len() > 1 && prev.ends_with('n') {
                        prev.pop();
                        out.push("n't".to_string());
                        i = end;
                        continue;
                    }
                }
            }
            let tagged = format!("'{clitic}");
            if CLITICS.contains(&tagged.as_str()) {
                out.push(tagged);
                i = end;
            } else {
                out.push(c.to_string());
                i += 1;
            }
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Long, boring, blasphemous."),
            ["long", ",", "boring", ",", "blasphemous", "."]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("It's fine"), ["it", "'s", "fine"]);
        assert_eq!(tokenize("I don't"), ["i", "do", "n't"]);
        assert_eq!(tokenize("[UNK] film [EMPTY]"), ["[UNK]", "film", "[EMPTY]"]);
        assert_eq!(tokenize("'quoted'"), ["'", "quoted", "'"]);
        assert_eq!(tokenize("[note]"), ["[", "note", "]"]);
        assert_eq!(tokenize("it 's do n't"), ["it", "'s", "do", "n't"]);
    }

    #[test]
    fn label_lookup_is_case_insensitive() {
        let t = Task::sentiment();
        assert_eq!(t.label_index("Positive"), Some(1));
        assert_eq!(t.label_index("positve"), None);
        assert_eq!(Task::nli().labels(), ["entailment", "neutral", "contradiction"]);
        assert_eq!(Task::sexism().label_index("SEXIST"), Some(1));
    }

    #[test]
    fn parses_valid_sentiment_file() {
        let src = r#"{"text": "great film", "label": "positive"}
{"id": "b", "text": "dull", "label": "Negative"}
{"text": "fine", "label": "positive"}
"#;
        let ds = parse_jsonl(src, "toy", &Task::sentiment(), Split::Train).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.examples[1].id, "b");
        assert_eq!(ds.examples[1].label, 0);
        assert!(!ds.examples[0].explicit_id);
        assert_eq!(ds.examples[0].id, content_id("great film", None, "positive"));
    }

    #[test]
    fn unknown_label_names_line() {
        let src = "{\"text\": \"a\", \"label\": \"positive\"}\n{\"text\": \"b\", \"label\": \"positve\"}\n";
        let err = parse_jsonl(src, "x", &Task::sentiment(), Split::Train).unwrap_err();
        assert!(err.to_string().starts_with("unknown label at line 2"), "{err}");
    }

    #[test]
    fn nli_missing_hypothesis_names_line() {
        let src = "{\"text\": \"p\", \"text_b\": \"h\", \"label\": \"neutral\"}\n{\"text\": \"p2\", \"label\": \"entailment\"}\n";
        let err = parse_jsonl(src, "x", &Task::nli(), Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::MissingTextB { line: 2 }));
    }

    #[test]
    fn malformed_and_empty_lines() {
        let err = parse_jsonl("{oops\n", "x", &Task::sentiment(), Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
        let err = parse_jsonl("{\"text\": \"  \", \"label\": \"positive\"}", "x", &Task::sentiment(), Split::Train)
            .unwrap_err();
        assert!(matches!(err, CorpusError::EmptyText { line: 1 }));
    }

    #[test]
    fn duplicate_content_gets_distinct_ids() {
        let line = "{\"text\": \"same\", \"label\": \"positive\"}\n";
        let ds = parse_jsonl(&line.repeat(3), "x", &Task::sentiment(), Split::Train).unwrap();
        let ids: HashSet<_> = ds.examples.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 3);
    }

    fn numbered(n: usize) -> Dataset {
        let ex = (0..n)
            .map(|i| LabeledExample::new(format!("e{i}"), format!("text {i}"), i % 2))
            .collect();
        Dataset::new("n", Task::sentiment(), Split::Train, ex).unwrap()
    }

    #[test]
    fn split_sizes() {
        let (tr, va) = split_train_val(&numbered(100), 0.1, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
        let (tr, va) = split_train_val(&numbered(2), 0.1, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
        let (a, _) = split_train_val(&numbered(50), 0.3, 11).unwrap();
        let (b, _) = split_train_val(&numbered(50), 0.3, 11).unwrap();
        assert_eq!(a.examples, b.examples);
        assert!(split_train_val(&numbered(10), 1.0, 0).is_err());
        assert!(split_train_val(&numbered(10), 0.0, 0).is_err());
    }

    #[test]
    fn split_partitions_ids() {
        let ds = numbered(37);
        let (tr, va) = split_train_val(&ds, 0.25, 3).unwrap();
        let mut ids: Vec<_> = tr.examples.iter().chain(&va.examples).map(|e| e.id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = ds.examples.iter().map(|e| e.id.clone()).collect();
        want.sort();
        assert_eq!(ids, want);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn jsonl_round_trip(rows in prop::collection::vec(("[a-zA-Z ,.!']{1,30}", any::<bool>(), any::<bool>()), 1..20)) {
                let mut src = String::new();
                for (i, (text, pos, with_id)) in rows.iter().enumerate() {
                    let text = if text.trim().is_empty() { "x".to_string() } else { text.clone() };
                    let rec = ExampleRecord {
                        id: with_id.then(|| format!("id{i}")),
                        text,
                        text_b: None,
                        label: if *pos { "positive" } else { "negative" }.into(),
                    };
                    src.push_str(&serde_json::to_string(&rec).unwrap());
                    src.push('\n');
                }
                let ds = parse_jsonl(&src, "p", &Task::sentiment(), Split::Train).unwrap();
                prop_assert_eq!(ds.to_jsonl(), src);
            }

            #[test]
            fn tokenize_is_idempotent_over_detokenize(s in "[a-zA-Z0-9 ,.!?'\\-]{0,60}") {
                let once = tokenize(&s);
                prop_assert_eq!(tokenize(&detokenize(&once)), once);
            }

            #[test]
            fn tokenize_is_pure(s in "\\PC{0,60}") {
                prop_assert_eq!(tokenize(&s), tokenize(&s));
            }
        }
    }
}
