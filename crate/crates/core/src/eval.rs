//! Accuracy evaluation, Overall aggregation and cross-domain matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample};
use crate::encoder::Encoder;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cannot evaluate on an empty dataset{}", .0.as_deref().map(|n| format!(" ({n})")).unwrap_or_default())]
    Empty(Option<String>),
    #[error("run {run:?} is missing split {split:?}")]
    MissingSplit { run: String, split: String },
    #[error("cross-domain evaluation needs at least two domains, got {0}")]
    TooFewDomains(usize),
    #[error("no results to aggregate")]
    NoRuns,
}

const CHUNK: usize = 256;

/// Percentage of examples whose argmax logit equals the gold label.
pub fn accuracy<E: Encoder + ?Sized>(encoder: &E, examples: &[LabeledExample]) -> Result<f64, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty(None));
    }
    let correct: usize = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            encoder
                .predict(chunk)
                .iter()
                .zip(chunk)
                .filter(|(p, e)| **p == e.label)
                .count()
        })
        .sum();
    Ok(100.0 * correct as f64 / examples.len() as f64)
}

pub fn evaluate<E: Encoder + ?Sized>(encoder: &E, ds: &Dataset) -> Result<f64, EvalError> {
    accuracy(encoder, &ds.examples).map_err(|_| EvalError::Empty(Some(ds.name.clone())))
}

pub type Rows = BTreeMap<String, BTreeMap<String, f64>>;

/// Unweighted mean across splits for every run. All runs must report the
/// same split set.
pub fn aggregate_overall(rows: &Rows) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut splits: Vec<&String> = rows.values().flat_map(|r| r.keys()).collect();
    splits.sort();
    splits.dedup();
    let mut overall = BTreeMap::new();
    for (run, row) in rows {
        if let Some(missing) = splits.iter().find(|s| !row.contains_key(**s)) {
            return Err(EvalError::MissingSplit {
                run: run.clone(),
                split: (*missing).clone(),
            });
        }
        if row.is_empty() {
            return Err(EvalError::Empty(Some(run.clone())));
        }
        overall.insert(run.clone(), row.values().sum::<f64>() / row.len() as f64);
    }
    Ok(overall)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// run → split → accuracy averaged over seeds.
    pub rows: Rows,
    pub overall: BTreeMap<String, f64>,
    pub seeds: Vec<u64>,
    /// run → split → one accuracy per seed, in `seeds` order.
    pub per_seed: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    /// Column order for display.
    pub split_order: Vec<String>,
}

impl EvalReport {
    pub fn from_per_seed(
        per_seed: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
        seeds: Vec<u64>,
        split_order: Vec<String>,
    ) -> Result<Self, EvalError> {
        if per_seed.is_empty() {
            return Err(EvalError::NoRuns);
        }
        let mut rows = Rows::new();
        for (run, splits) in &per_seed {
            let mut row = BTreeMap::new();
            for (split, accs) in splits {
                if accs.is_empty() {
                    return Err(EvalError::Empty(Some(format!("{run}/{split}"))));
                }
                row.insert(split.clone(), mean(accs));
            }
            rows.insert(run.clone(), row);
        }
        let overall = aggregate_overall(&rows)?;
        Ok(EvalReport {
            rows,
            overall,
            seeds,
            per_seed,
            split_order,
        })
    }

    fn columns(&self) -> Vec<String> {
        let mut cols = self.split_order.clone();
        for row in self.rows.values() {
            for k in row.keys() {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    /// Aligned text table: one row per run, one column per split, then Overall.
    pub fn render_table(&self) -> String {
        let cols = self.columns();
        let mut header = vec!["Run".to_string()];
        header.extend(cols.iter().cloned());
        header.push("Overall".into());
        let mut lines = vec![header];
        for (run, row) in &self.rows {
            let mut line = vec![run.clone()];
            for c in &cols {
                line.push(row.get(c).map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()));
            }
            line.push(self.overall.get(run).map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, line) in lines.iter().enumerate() {
            for (i, cell) in line.iter().enumerate() {
                if i == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[i]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[i]);
                }
            }
            out.push('\n');
            if n == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

/// A domain in a cross-domain matrix: a short label (`"S"`, `"I"`, ...) with
/// its training and test sets.
pub struct Domain {
    pub label: String,
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub report: Option<EvalReport>,
    /// Cell or source-domain failures, keyed like the cells.
    pub errors: BTreeMap<String, String>,
}

/// Trains once per source domain and seed, then evaluates on every other
/// domain's test set. Cells are keyed `"S→I"`. A failing training run or
/// evaluation is recorded and the remaining cells still run.
pub fn cross_domain<F>(run_name: &str, domains: &[Domain], seeds: &[u64], trainer: F) -> Result<CrossDomainReport, EvalError>
where
    F: Fn(&Dataset, u64) -> Result<Box<dyn Encoder>, String>,
{
    if domains.len() < 2 {
        return Err(EvalError::TooFewDomains(domains.len()));
    }
    let mut cells: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut errors = BTreeMap::new();
    let mut order = Vec::new();
    for src in domains {
        for dst in domains.iter().filter(|d| d.label != src.label) {
            order.push(format!("{}→{}", src.label, dst.label));
        }
    }
    for src in domains {
        for &seed in seeds {
            let encoder = match trainer(&src.train, seed) {
                Ok(e) => e,
                Err(e) => {
                    for dst in domains.iter().filter(|d| d.label != src.label) {
                        errors.insert(format!("{}→{}", src.label, dst.label), format!("seed {seed}: {e}"));
                    }
                    continue;
                }
            };
            for dst in domains.iter().filter(|d| d.label != src.label) {
                let key = format!("{}→{}", src.label, dst.label);
                match evaluate(&*encoder, &dst.test) {
                    Ok(acc) => cells.entry(key).or_default().push(acc),
                    Err(e) => {
                        errors.insert(key, format!("seed {seed}: {e}"));
                    }
                }
            }
        }
    }
    // Cells with any failed seed are reported as errors only.
    cells.retain(|k, v| !errors.contains_key(k) && v.len() == seeds.len());
    order.retain(|k| cells.contains_key(k));
    let report = if cells.is_empty() {
        None
    } else {
        let mut per_seed = BTreeMap::new();
        per_seed.insert(run_name.to_string(), cells);
        Some(EvalReport::from_per_seed(per_seed, seeds.to_vec(), order)?)
    };
    Ok(CrossDomainReport { report, errors })
}
